#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "wrf/matrix.hpp"
#include "wrf/measure.hpp"
#include "wrf/rng.hpp"

namespace wrf {

enum class SplitRule { intra_l2, inter_wp };

struct ForestParams {
  int m_trees = 100;
  int subsample_size = 2;  // a_n
  bool with_replacement = false;
  int mtry = 1;
  int nodesize = 2;
  SplitRule criterion = SplitRule::intra_l2;
  double p = 2.0;  // Wasserstein order, used by inter_wp
  std::uint64_t seed = 0;
  bool standardize_response = false;
};

// Flat node: dim == -1 marks a leaf owning slots [first, first+count) of the
// tree's slot permutation; otherwise x[dim] <= threshold routes left.
struct TreeNode {
  int dim = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  int first = 0;
  int count = 0;

  bool is_leaf() const { return dim < 0; }
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root
  std::vector<int> subsample;   // slot -> original row index, length a_n
  std::vector<int> slots;       // permutation of [0, a_n); leaves own ranges
};

struct PredictionWeights {
  std::vector<double> alpha;  // length n, nonnegative, sums to one
};

struct Forest {
  ForestParams params;
  std::string method = "wrf";  // wrf | ert | mondrian; baselines share the type
  int dim_x = 0;
  std::vector<Tree> trees;
  Matrix training_y;
  std::vector<double> normalization;  // per-coordinate response scale; empty = off
};

struct SplitChoice {
  int dim = -1;
  double threshold = 0.0;
  double gain = -std::numeric_limits<double>::infinity();
};

namespace detail {

// W_p^p between the uniform measure on `group` (sorted, g atoms) and the
// uniform measure on `cell` (sorted, n atoms) via the quantile formula. All
// quantile segments live on the common 1/(g*n) grid, so the sweep tracks
// exact integer tick counts instead of accumulated masses.
inline double wpp_sorted_uniform(const double* group, int g, const double* cell, int n,
                                 double p) {
  double total = 0.0;
  int i = 0;
  int j = 0;
  int ticks_g = n;  // each group atom spans n grid ticks
  int ticks_c = g;  // each cell atom spans g grid ticks
  for (;;) {
    const int seg = ticks_g < ticks_c ? ticks_g : ticks_c;
    total += seg * pow_abs(group[i] - cell[j], p);
    ticks_g -= seg;
    ticks_c -= seg;
    if (ticks_g == 0) {
      if (++i == g) break;
      ticks_g = n;
    }
    if (ticks_c == 0) {
      if (++j == n) break;
      ticks_c = g;
    }
  }
  return total / (static_cast<double>(g) * static_cast<double>(n));
}

inline void check_partition(const Matrix& cell_y, const Matrix& left_y,
                            const Matrix& right_y) {
  if (left_y.rows == 0 || right_y.rows == 0)
    throw ValidationError("split gain: empty child");
  if (left_y.rows + right_y.rows != cell_y.rows || left_y.cols != cell_y.cols ||
      right_y.cols != cell_y.cols)
    throw ValidationError("split gain: children do not partition the cell");

  const auto sorted_rows = [](const Matrix& m) {
    std::vector<std::vector<double>> rows(m.rows);
    for (std::size_t i = 0; i < m.rows; ++i)
      rows[i].assign(m.row(i).begin(), m.row(i).end());
    std::sort(rows.begin(), rows.end());
    return rows;
  };
  auto whole = sorted_rows(cell_y);
  auto parts = sorted_rows(left_y);
  auto rhs = sorted_rows(right_y);
  parts.insert(parts.end(), rhs.begin(), rhs.end());
  std::sort(parts.begin(), parts.end());
  if (parts != whole)
    throw ValidationError("split gain: children are not a multiset partition of the cell");
}

}  // namespace detail

// L2 intra-class gain: per-coordinate squared deviations around each group
// mean, every term normalized by the parent size, summed over coordinates.
// Equals the variance decomposition of the parent cell.
inline double intra_gain(const Matrix& cell_y, const Matrix& left_y,
                         const Matrix& right_y) {
  detail::check_partition(cell_y, left_y, right_y);
  const double na = static_cast<double>(cell_y.rows);
  double gain = 0.0;
  for (std::size_t k = 0; k < cell_y.cols; ++k) {
    const auto w_term = [k, na](const Matrix& g) {
      double mean = 0.0;
      for (std::size_t i = 0; i < g.rows; ++i) mean += g(i, k);
      mean /= static_cast<double>(g.rows);
      double dev = 0.0;
      for (std::size_t i = 0; i < g.rows; ++i) {
        const double c = g(i, k) - mean;
        dev += c * c;
      }
      return dev / na;
    };
    gain += w_term(cell_y) - w_term(left_y) - w_term(right_y);
  }
  return gain;
}

// Inter-class gain: mass-weighted W_p^p distances of the child empirical
// measures from the parent empirical measure. Univariate responses only.
inline double inter_gain(const Matrix& cell_y, const Matrix& left_y,
                         const Matrix& right_y, double p) {
  if (cell_y.cols != 1)
    throw ValidationError("inter_gain: only univariate responses are supported");
  if (!(p >= 1.0)) throw ValidationError("inter_gain: order p must be >= 1");
  detail::check_partition(cell_y, left_y, right_y);

  std::vector<double> cell(cell_y.data), left(left_y.data), right(right_y.data);
  std::sort(cell.begin(), cell.end());
  std::sort(left.begin(), left.end());
  std::sort(right.begin(), right.end());

  const int n = static_cast<int>(cell.size());
  const double na = static_cast<double>(n);
  const double wl = detail::wpp_sorted_uniform(
      left.data(), static_cast<int>(left.size()), cell.data(), n, p);
  const double wr = detail::wpp_sorted_uniform(
      right.data(), static_cast<int>(right.size()), cell.data(), n, p);
  return (static_cast<double>(left.size()) / na) * wl +
         (static_cast<double>(right.size()) / na) * wr;
}

namespace detail {

struct SplitScratch {
  std::vector<int> order;
  std::vector<double> xs;           // cell x-values along one dim, sorted
  std::vector<double> ys;           // responses in the same order, row-major
  std::vector<double> cell_sorted;  // sorted univariate responses (inter)
  std::vector<double> left_sorted;
  std::vector<double> right_sorted;
  std::vector<double> mean, t1, t2, l1, l2;
};

inline double midpoint(double lo, double hi) {
  const double mid = lo + 0.5 * (hi - lo);
  // Adjacent doubles can round the midpoint onto hi; fall back to lo so the
  // left child keeps at least the lo-block and the right child stays nonempty.
  return mid < hi ? mid : lo;
}

// Candidate sweep along one dimension under the intra criterion: running
// centered moments of the left block, complements for the right block.
inline void scan_intra(int dim, SplitScratch& ws, std::size_t dp, SplitChoice& best) {
  const std::vector<double>& xs = ws.xs;
  const std::vector<double>& ys = ws.ys;
  const int n = static_cast<int>(xs.size());
  const double na = static_cast<double>(n);

  ws.mean.assign(dp, 0.0);
  for (int i = 0; i < n; ++i)
    for (std::size_t k = 0; k < dp; ++k)
      ws.mean[k] += ys[static_cast<std::size_t>(i) * dp + k];
  for (std::size_t k = 0; k < dp; ++k) ws.mean[k] /= na;

  ws.t1.assign(dp, 0.0);
  ws.t2.assign(dp, 0.0);
  for (int i = 0; i < n; ++i)
    for (std::size_t k = 0; k < dp; ++k) {
      const double c = ys[static_cast<std::size_t>(i) * dp + k] - ws.mean[k];
      ws.t1[k] += c;
      ws.t2[k] += c * c;
    }
  double total_sse = 0.0;
  for (std::size_t k = 0; k < dp; ++k)
    total_sse += ws.t2[k] - ws.t1[k] * ws.t1[k] / na;

  ws.l1.assign(dp, 0.0);
  ws.l2.assign(dp, 0.0);
  for (int i = 0; i + 1 < n; ++i) {
    for (std::size_t k = 0; k < dp; ++k) {
      const double c = ys[static_cast<std::size_t>(i) * dp + k] - ws.mean[k];
      ws.l1[k] += c;
      ws.l2[k] += c * c;
    }
    if (!(xs[static_cast<std::size_t>(i)] < xs[static_cast<std::size_t>(i) + 1])) continue;

    const double nl = static_cast<double>(i + 1);
    const double nr = static_cast<double>(n - i - 1);
    double child_sse = 0.0;
    for (std::size_t k = 0; k < dp; ++k) {
      const double r1 = ws.t1[k] - ws.l1[k];
      const double r2 = ws.t2[k] - ws.l2[k];
      child_sse += (ws.l2[k] - ws.l1[k] * ws.l1[k] / nl) + (r2 - r1 * r1 / nr);
    }
    const double gain = (total_sse - child_sse) / na;
    if (gain > best.gain) {
      best.gain = gain;
      best.dim = dim;
      best.threshold = midpoint(xs[static_cast<std::size_t>(i)],
                                xs[static_cast<std::size_t>(i) + 1]);
    }
  }
}

// Candidate sweep under the inter criterion: the cell's responses are sorted
// once, and each boundary moves one value from the right multiset into the
// left one, keeping both sorted for the quantile sweep.
inline void scan_inter(int dim, SplitScratch& ws, double p, SplitChoice& best) {
  const std::vector<double>& xs = ws.xs;
  const std::vector<double>& ys = ws.ys;
  const std::vector<double>& cell = ws.cell_sorted;
  const int n = static_cast<int>(xs.size());
  const double na = static_cast<double>(n);

  ws.left_sorted.clear();
  ws.right_sorted = cell;
  for (int i = 0; i + 1 < n; ++i) {
    const double v = ys[static_cast<std::size_t>(i)];
    ws.left_sorted.insert(
        std::upper_bound(ws.left_sorted.begin(), ws.left_sorted.end(), v), v);
    ws.right_sorted.erase(
        std::lower_bound(ws.right_sorted.begin(), ws.right_sorted.end(), v));
    if (!(xs[static_cast<std::size_t>(i)] < xs[static_cast<std::size_t>(i) + 1])) continue;

    const int g = i + 1;
    const double wl =
        wpp_sorted_uniform(ws.left_sorted.data(), g, cell.data(), n, p);
    const double wr =
        wpp_sorted_uniform(ws.right_sorted.data(), n - g, cell.data(), n, p);
    const double gain =
        (static_cast<double>(g) / na) * wl + (static_cast<double>(n - g) / na) * wr;
    if (gain > best.gain) {
      best.gain = gain;
      best.dim = dim;
      best.threshold = midpoint(xs[static_cast<std::size_t>(i)],
                                xs[static_cast<std::size_t>(i) + 1]);
    }
  }
}

// Two-pass re-evaluation of the winning intra split; the incremental sweep
// values carry enough rounding that the recorded gain is recomputed exactly
// once per node.
inline double intra_gain_rows(const Matrix& x, const Matrix& y,
                              std::span<const int> rows, int dim, double thr) {
  const std::size_t dp = y.cols;
  const double na = static_cast<double>(rows.size());
  double gain = 0.0;
  std::vector<double> mean_a(dp, 0.0), mean_l(dp, 0.0), mean_r(dp, 0.0);
  std::size_t nl = 0;
  for (int r : rows) {
    const bool go_left = x(static_cast<std::size_t>(r), static_cast<std::size_t>(dim)) <= thr;
    if (go_left) ++nl;
    for (std::size_t k = 0; k < dp; ++k) {
      const double v = y(static_cast<std::size_t>(r), k);
      mean_a[k] += v;
      (go_left ? mean_l : mean_r)[k] += v;
    }
  }
  const std::size_t nr = rows.size() - nl;
  for (std::size_t k = 0; k < dp; ++k) {
    mean_a[k] /= na;
    mean_l[k] /= static_cast<double>(nl);
    mean_r[k] /= static_cast<double>(nr);
  }
  for (std::size_t k = 0; k < dp; ++k) {
    double dev = 0.0;
    for (int r : rows) {
      const double v = y(static_cast<std::size_t>(r), k);
      const bool go_left =
          x(static_cast<std::size_t>(r), static_cast<std::size_t>(dim)) <= thr;
      const double ca = v - mean_a[k];
      const double cc = v - (go_left ? mean_l[k] : mean_r[k]);
      dev += ca * ca - cc * cc;
    }
    gain += dev / na;
  }
  return gain;
}

inline std::optional<SplitChoice> best_split_rows(const Matrix& x, const Matrix& split_y,
                                                  std::span<const int> rows,
                                                  std::span<const int> try_dims,
                                                  const ForestParams& params,
                                                  SplitScratch& ws) {
  const std::size_t n = rows.size();
  const std::size_t dp = split_y.cols;

  std::vector<int> dims(try_dims.begin(), try_dims.end());
  std::sort(dims.begin(), dims.end());

  if (params.criterion == SplitRule::inter_wp) {
    ws.cell_sorted.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      ws.cell_sorted[i] = split_y(static_cast<std::size_t>(rows[i]), 0);
    std::sort(ws.cell_sorted.begin(), ws.cell_sorted.end());
  }

  SplitChoice best;
  for (int dim : dims) {
    ws.order.resize(n);
    for (std::size_t i = 0; i < n; ++i) ws.order[i] = static_cast<int>(i);
    std::sort(ws.order.begin(), ws.order.end(), [&](int a, int b) {
      const double xa = x(static_cast<std::size_t>(rows[static_cast<std::size_t>(a)]),
                          static_cast<std::size_t>(dim));
      const double xb = x(static_cast<std::size_t>(rows[static_cast<std::size_t>(b)]),
                          static_cast<std::size_t>(dim));
      return xa < xb || (xa == xb && a < b);
    });
    ws.xs.resize(n);
    ws.ys.resize(n * dp);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t r = static_cast<std::size_t>(rows[static_cast<std::size_t>(ws.order[i])]);
      ws.xs[i] = x(r, static_cast<std::size_t>(dim));
      for (std::size_t k = 0; k < dp; ++k) ws.ys[i * dp + k] = split_y(r, k);
    }
    if (!(ws.xs.front() < ws.xs.back())) continue;  // constant on this dim

    if (params.criterion == SplitRule::intra_l2)
      scan_intra(dim, ws, dp, best);
    else
      scan_inter(dim, ws, params.p, best);
  }

  if (best.dim < 0) return std::nullopt;
  if (params.criterion == SplitRule::intra_l2)
    best.gain = intra_gain_rows(x, split_y, rows, best.dim, best.threshold);
  return best;
}

inline bool rows_identical_x(const Matrix& x, std::span<const int> rows) {
  const auto first = x.row(static_cast<std::size_t>(rows[0]));
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto other = x.row(static_cast<std::size_t>(rows[i]));
    for (std::size_t k = 0; k < first.size(); ++k)
      if (other[k] != first[k]) return false;
  }
  return true;
}

inline void validate_params(const Dataset& ds, const ForestParams& params) {
  validate_dataset(ds);
  const int n = static_cast<int>(ds.n());
  if (params.m_trees < 1) throw ValidationError("params: m_trees must be >= 1");
  if (params.subsample_size < 2)
    throw ValidationError("params: subsample_size must be >= 2");
  if (!params.with_replacement && params.subsample_size > n)
    throw ValidationError("params: subsample_size must be <= n without replacement");
  if (params.mtry < 1 || params.mtry > static_cast<int>(ds.dim_x()))
    throw ValidationError("params: mtry must lie in [1, d]");
  if (params.nodesize < 2 || params.nodesize > params.subsample_size)
    throw ValidationError("params: nodesize must lie in [2, subsample_size]");
  if (params.criterion == SplitRule::inter_wp) {
    if (ds.dim_y() != 1)
      throw ValidationError("params: inter_wp requires univariate responses");
    if (!(params.p >= 1.0)) throw ValidationError("params: order p must be >= 1");
  }
}

// BFS tree growth shared by every forest flavor: subsample a_n slots, then
// split cells until one is smaller than nodesize, has identical covariate
// rows, or the chooser returns nothing. The chooser sees the cell's original
// row indices and the node RNG; children are appended in discovery order.
template <typename ChooseSplit>
inline Tree grow_tree(const Dataset& ds, const ForestParams& params, Rng& rng,
                      ChooseSplit&& choose) {
  const int n = static_cast<int>(ds.n());
  const int an = params.subsample_size;

  Tree tree;
  if (params.with_replacement) {
    tree.subsample.resize(static_cast<std::size_t>(an));
    for (int& s : tree.subsample)
      s = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
  } else {
    tree.subsample = rng.sample_without_replacement(n, an);
  }
  tree.slots.resize(static_cast<std::size_t>(an));
  for (int i = 0; i < an; ++i) tree.slots[static_cast<std::size_t>(i)] = i;

  tree.nodes.push_back(TreeNode{-1, 0.0, -1, -1, 0, an});
  std::deque<int> pending{0};
  std::vector<int> rows;

  while (!pending.empty()) {
    const int id = pending.front();
    pending.pop_front();
    const int first = tree.nodes[static_cast<std::size_t>(id)].first;
    const int count = tree.nodes[static_cast<std::size_t>(id)].count;
    if (count < params.nodesize) continue;

    rows.resize(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i)
      rows[static_cast<std::size_t>(i)] =
          tree.subsample[static_cast<std::size_t>(tree.slots[static_cast<std::size_t>(first + i)])];
    if (rows_identical_x(ds.x, rows)) continue;

    const std::optional<SplitChoice> choice = choose(rows, rng);
    if (!choice) continue;

    const auto mid = std::stable_partition(
        tree.slots.begin() + first, tree.slots.begin() + first + count, [&](int slot) {
          const std::size_t r =
              static_cast<std::size_t>(tree.subsample[static_cast<std::size_t>(slot)]);
          return ds.x(r, static_cast<std::size_t>(choice->dim)) <= choice->threshold;
        });
    const int left_count = static_cast<int>(mid - (tree.slots.begin() + first));

    const int left_id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back(TreeNode{-1, 0.0, -1, -1, first, left_count});
    tree.nodes.push_back(TreeNode{-1, 0.0, -1, -1, first + left_count, count - left_count});
    TreeNode& node = tree.nodes[static_cast<std::size_t>(id)];
    node.dim = choice->dim;
    node.threshold = choice->threshold;
    node.left = left_id;
    node.right = left_id + 1;
    pending.push_back(left_id);
    pending.push_back(left_id + 1);
  }
  return tree;
}

// Computes the per-coordinate response scales when standardization is on and
// returns the scaled copy the criteria should split on; predictions always
// use the original responses.
inline const Matrix* standardized_split_y(const Dataset& ds, const ForestParams& params,
                                          Forest& forest, Matrix& storage) {
  if (!params.standardize_response) return nullptr;
  const std::size_t dp = ds.dim_y();
  forest.normalization.assign(dp, 1.0);
  for (std::size_t k = 0; k < dp; ++k) {
    double mean = 0.0;
    for (std::size_t i = 0; i < ds.n(); ++i) mean += ds.y(i, k);
    mean /= static_cast<double>(ds.n());
    double var = 0.0;
    for (std::size_t i = 0; i < ds.n(); ++i) {
      const double c = ds.y(i, k) - mean;
      var += c * c;
    }
    const double sd = std::sqrt(var / static_cast<double>(ds.n()));
    forest.normalization[k] = sd > 1e-300 ? sd : 1.0;
  }
  storage = ds.y;
  for (std::size_t i = 0; i < ds.n(); ++i)
    for (std::size_t k = 0; k < dp; ++k) storage(i, k) /= forest.normalization[k];
  return &storage;
}

// Runs build(rng) for every tree index on its own deterministic substream,
// optionally spread over a thread pool; the result is independent of the
// thread count.
template <typename BuildOne>
inline void build_forest_trees(Forest& forest, int threads, BuildOne&& build) {
  const int m = forest.params.m_trees;
  forest.trees.resize(static_cast<std::size_t>(m));
  const int workers = std::clamp(threads, 1, m);
  const auto run = [&](int w) {
    for (int j = w; j < m; j += workers) {
      Rng rng = Rng::substream(forest.params.seed, static_cast<std::uint64_t>(j));
      forest.trees[static_cast<std::size_t>(j)] = build(rng);
    }
  };
  if (workers == 1) {
    run(0);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) pool.emplace_back([&run, w]() { run(w); });
  for (auto& t : pool) t.join();
}

}  // namespace detail

// Scores every midpoint candidate on each tried dimension and returns the
// best (dim, threshold, gain) under the configured criterion, or nothing if
// no candidate produces two nonempty children. Ties resolve to the lowest
// dim, then the smallest threshold.
inline std::optional<SplitChoice> best_split(const Dataset& ds,
                                             std::span<const int> cell_rows,
                                             std::span<const int> try_dims,
                                             const ForestParams& params) {
  if (cell_rows.size() < 2)
    throw ValidationError("best_split: cell must hold at least 2 points");
  if (try_dims.empty()) throw ValidationError("best_split: try_dims is empty");
  for (int r : cell_rows)
    if (r < 0 || static_cast<std::size_t>(r) >= ds.n())
      throw ValidationError("best_split: row index out of range");
  for (int d : try_dims)
    if (d < 0 || static_cast<std::size_t>(d) >= ds.dim_x())
      throw ValidationError("best_split: dim index out of range");
  if (params.criterion == SplitRule::inter_wp && ds.dim_y() != 1)
    throw ValidationError("best_split: inter_wp requires univariate responses");

  detail::SplitScratch ws;
  return detail::best_split_rows(ds.x, ds.y, cell_rows, try_dims, params, ws);
}

// Grows one tree under the configured criterion: per eligible node the RNG
// draws mtry distinct dimensions, then the best candidate cut wins.
inline Tree build_tree(const Dataset& ds, const ForestParams& params, Rng& rng,
                       const Matrix* split_y = nullptr) {
  detail::validate_params(ds, params);
  const Matrix& y_for_split = split_y ? *split_y : ds.y;
  const int d = static_cast<int>(ds.dim_x());
  detail::SplitScratch ws;
  return detail::grow_tree(ds, params, rng, [&](const std::vector<int>& rows, Rng& r) {
    const std::vector<int> dims = r.sample_without_replacement(d, params.mtry);
    return detail::best_split_rows(ds.x, y_for_split, rows, dims, params, ws);
  });
}

// Trains m_trees trees, tree j on the deterministic stream substream(seed, j),
// so the forest is a pure function of (dataset, params) at any thread count.
inline Forest fit(const Dataset& ds, const ForestParams& params, int threads = 1) {
  detail::validate_params(ds, params);

  Forest forest;
  forest.params = params;
  forest.dim_x = static_cast<int>(ds.dim_x());
  forest.training_y = ds.y;

  Matrix storage;
  const Matrix* split_y = detail::standardized_split_y(ds, params, forest, storage);
  detail::build_forest_trees(forest, threads, [&](Rng& rng) {
    return build_tree(ds, params, rng, split_y);
  });
  return forest;
}

namespace detail {

inline const TreeNode& route(const Tree& tree, std::span<const double> x) {
  int id = 0;
  const TreeNode* nodes = tree.nodes.data();
  while (!nodes[id].is_leaf())
    id = x[static_cast<std::size_t>(nodes[id].dim)] <= nodes[id].threshold
             ? nodes[id].left
             : nodes[id].right;
  return nodes[id];
}

inline void check_query(const Forest& forest, std::span<const double> x) {
  if (static_cast<int>(x.size()) != forest.dim_x)
    throw ValidationError("predict: query has dimension " + std::to_string(x.size()) +
                          ", forest expects " + std::to_string(forest.dim_x));
  if (forest.trees.empty()) throw ValidationError("predict: forest has no trees");
}

}  // namespace detail

// Per-row weights of the forest's predicted measure at x, averaged over the
// listed trees: each tree routes x to a leaf and spreads 1/(trees * leaf
// count) over the rows occupying that leaf, duplicates counting once per slot.
inline PredictionWeights weights_over(const Forest& forest, std::span<const double> x,
                                      std::span<const int> tree_ids) {
  detail::check_query(forest, x);
  if (tree_ids.empty()) throw ValidationError("weights: no trees selected");

  PredictionWeights pw;
  pw.alpha.assign(forest.training_y.rows, 0.0);
  const double share = 1.0 / static_cast<double>(tree_ids.size());
  for (int j : tree_ids) {
    const Tree& tree = forest.trees[static_cast<std::size_t>(j)];
    const TreeNode& leaf = detail::route(tree, x);
    if (leaf.count <= 0) continue;  // defensive: trained leaves are nonempty
    const double mass = share / static_cast<double>(leaf.count);
    for (int s = 0; s < leaf.count; ++s) {
      const int slot = tree.slots[static_cast<std::size_t>(leaf.first + s)];
      pw.alpha[static_cast<std::size_t>(tree.subsample[static_cast<std::size_t>(slot)])] +=
          mass;
    }
  }
  return pw;
}

inline PredictionWeights weights(const Forest& forest, std::span<const double> x) {
  std::vector<int> ids(forest.trees.size());
  for (std::size_t j = 0; j < ids.size(); ++j) ids[j] = static_cast<int>(j);
  return weights_over(forest, x, ids);
}

// Turns a weight vector over the training rows into the discrete measure it
// induces on the training responses.
inline DiscreteMeasure measure_from_weights(const Forest& forest,
                                            const PredictionWeights& pw) {
  if (pw.alpha.size() != forest.training_y.rows)
    throw ValidationError("measure_from_weights: weight length mismatch");
  std::size_t support = 0;
  for (double a : pw.alpha)
    if (a > 0.0) ++support;

  Matrix pts(support, forest.training_y.cols);
  std::vector<double> w(support);
  std::size_t out = 0;
  for (std::size_t i = 0; i < pw.alpha.size(); ++i) {
    if (pw.alpha[i] <= 0.0) continue;
    for (std::size_t k = 0; k < forest.training_y.cols; ++k)
      pts(out, k) = forest.training_y(i, k);
    w[out] = pw.alpha[i];
    ++out;
  }
  return make_measure(pts, std::move(w));
}

// The forest's estimate of the conditional distribution at x: the training
// responses that share a leaf with x, weighted by alpha.
inline DiscreteMeasure predict_measure(const Forest& forest, std::span<const double> x) {
  return measure_from_weights(forest, weights(forest, x));
}

inline std::vector<double> predict_mean(const Forest& forest, std::span<const double> x) {
  const PredictionWeights pw = weights(forest, x);
  double total = 0.0;
  for (double a : pw.alpha)
    if (a > 0.0) total += a;
  std::vector<double> mean(forest.training_y.cols, 0.0);
  for (std::size_t i = 0; i < pw.alpha.size(); ++i) {
    if (pw.alpha[i] <= 0.0) continue;
    const double wi = pw.alpha[i] / total;
    for (std::size_t k = 0; k < forest.training_y.cols; ++k)
      mean[k] += wi * forest.training_y(i, k);
  }
  return mean;
}

}  // namespace wrf
