#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wrf/matrix.hpp"
#include "wrf/network_simplex.hpp"

namespace wrf {

// Finitely supported probability measure on R^d: points (one per row) with
// nonnegative weights summing to one. Duplicate support points are allowed
// and keep their own mass.
class DiscreteMeasure {
public:
  DiscreteMeasure() = default;

  std::size_t size() const { return weights_.size(); }
  std::size_t dim() const { return dim_; }

  std::span<const double> point(std::size_t i) const {
    return {points_.data() + i * dim_, dim_};
  }
  double coord(std::size_t i, std::size_t k) const { return points_[i * dim_ + k]; }
  double weight(std::size_t i) const { return weights_[i]; }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<double>& flat_points() const { return points_; }

  std::vector<double> mean() const {
    std::vector<double> mu(dim_, 0.0);
    for (std::size_t i = 0; i < size(); ++i)
      for (std::size_t k = 0; k < dim_; ++k) mu[k] += weights_[i] * coord(i, k);
    return mu;
  }

  friend DiscreteMeasure make_measure(const Matrix&, std::vector<double>);

private:
  std::size_t dim_ = 0;
  std::vector<double> points_;
  std::vector<double> weights_;
};

// Builds a measure from support points (rows) and optional weights. Weights
// default to uniform; otherwise they must be finite, nonnegative and have a
// positive sum, and are renormalized to sum to one.
inline DiscreteMeasure make_measure(const Matrix& points,
                                    std::vector<double> weights = {}) {
  if (points.rows == 0) throw ValidationError("measure: empty support");
  if (points.cols == 0) throw ValidationError("measure: zero-dimensional support");
  for (double v : points.data)
    if (!std::isfinite(v)) throw ValidationError("measure: non-finite support point");

  if (weights.empty()) {
    weights.assign(points.rows, 1.0 / static_cast<double>(points.rows));
  } else {
    if (weights.size() != points.rows)
      throw ValidationError("measure: " + std::to_string(weights.size()) +
                            " weights for " + std::to_string(points.rows) + " points");
    double sum = 0.0;
    for (double w : weights) {
      if (!std::isfinite(w)) throw ValidationError("measure: non-finite weight");
      if (w < 0.0) throw ValidationError("measure: negative weight");
      sum += w;
    }
    if (sum <= 0.0) throw ValidationError("measure: weights sum to zero");
    for (double& w : weights) w /= sum;
  }

  DiscreteMeasure mu;
  mu.dim_ = points.cols;
  mu.points_ = points.data;
  mu.weights_ = std::move(weights);
  return mu;
}

inline DiscreteMeasure make_measure_1d(std::span<const double> values,
                                       std::vector<double> weights = {}) {
  Matrix pts(values.size(), 1);
  std::copy(values.begin(), values.end(), pts.data.begin());
  return make_measure(pts, std::move(weights));
}

// One entry of an optimal coupling: mass moved from atom `from` of the first
// measure to atom `to` of the second.
struct TransportPlan {
  struct Entry {
    std::size_t from;
    std::size_t to;
    double mass;
  };
  std::vector<Entry> entries;
  double cost = 0.0;  // sum of mass * |x - y|^p, before the 1/p root
};

namespace detail {

inline void check_order(double p) {
  if (!(p >= 1.0)) throw ValidationError("wasserstein: order p must be >= 1");
}

inline void check_same_dim(const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
  if (mu.dim() != nu.dim())
    throw ValidationError("wasserstein: dimension mismatch (" +
                          std::to_string(mu.dim()) + " vs " + std::to_string(nu.dim()) + ")");
}

inline double pow_abs(double d, double p) {
  const double a = std::fabs(d);
  if (p == 1.0) return a;
  if (p == 2.0) return a * a;
  return std::pow(a, p);
}

inline double root(double total, double p) {
  if (p == 1.0) return total;
  if (p == 2.0) return std::sqrt(total);
  return std::pow(total, 1.0 / p);
}

inline double dist_pow(std::span<const double> a, std::span<const double> b, double p) {
  if (a.size() == 1) return pow_abs(a[0] - b[0], p);
  double sq = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    sq += d * d;
  }
  if (p == 2.0) return sq;
  const double dist = std::sqrt(sq);
  return p == 1.0 ? dist : std::pow(dist, p);
}

// Atom order sorted by value, zero-weight atoms dropped.
inline void sorted_atoms_1d(const DiscreteMeasure& mu, std::vector<double>& values,
                            std::vector<double>& weights) {
  std::vector<std::size_t> order(mu.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return mu.coord(a, 0) < mu.coord(b, 0);
  });
  values.clear();
  weights.clear();
  for (std::size_t i : order) {
    if (mu.weight(i) <= 0.0) continue;
    values.push_back(mu.coord(i, 0));
    weights.push_back(mu.weight(i));
  }
}

}  // namespace detail

// W_p between measures on the real line via the quantile representation:
// W_p^p = integral over u in (0,1) of |F_mu^{-1}(u) - F_nu^{-1}(u)|^p.
// Runs in O(m log m + n log n).
inline double wasserstein_1d(const DiscreteMeasure& mu, const DiscreteMeasure& nu,
                             double p) {
  detail::check_order(p);
  detail::check_same_dim(mu, nu);
  if (mu.dim() != 1)
    throw ValidationError("wasserstein_1d: supports must be one-dimensional");

  std::vector<double> va, wa, vb, wb;
  detail::sorted_atoms_1d(mu, va, wa);
  detail::sorted_atoms_1d(nu, vb, wb);

  double total = 0.0;
  std::size_t i = 0, j = 0;
  double ra = wa[0], rb = wb[0];
  for (;;) {
    const double seg = std::min(ra, rb);
    total += seg * detail::pow_abs(va[i] - vb[j], p);
    ra -= seg;
    rb -= seg;
    if (ra <= 0.0) {
      if (++i == va.size()) break;
      ra = wa[i];
    }
    if (rb <= 0.0) {
      if (++j == vb.size()) break;
      rb = wb[j];
    }
  }
  return detail::root(total, p);
}

// Exact W_p in any dimension through the transportation network simplex,
// with costs |x_i - y_j|^p (Euclidean norm). Returns the distance and an
// optimal coupling whose marginals match the input weights.
inline std::pair<double, TransportPlan> wasserstein_exact(const DiscreteMeasure& mu,
                                                          const DiscreteMeasure& nu,
                                                          double p) {
  detail::check_order(p);
  detail::check_same_dim(mu, nu);

  std::vector<int> map_a, map_b;
  std::vector<double> supply, demand;
  for (std::size_t i = 0; i < mu.size(); ++i)
    if (mu.weight(i) > 0.0) {
      map_a.push_back(static_cast<int>(i));
      supply.push_back(mu.weight(i));
    }
  for (std::size_t j = 0; j < nu.size(); ++j)
    if (nu.weight(j) > 0.0) {
      map_b.push_back(static_cast<int>(j));
      demand.push_back(nu.weight(j));
    }
  const std::size_t m = supply.size();
  const std::size_t n = demand.size();

  // Balance exactly; make_measure already normalizes, so this only removes
  // last-ulp drift before the solver sees the marginals.
  const double sum_a = std::accumulate(supply.begin(), supply.end(), 0.0);
  const double sum_b = std::accumulate(demand.begin(), demand.end(), 0.0);
  if (std::fabs(sum_a - sum_b) > 1e-9)
    throw ValidationError("wasserstein: total masses differ");
  for (double& b : demand) b *= sum_a / sum_b;

  std::vector<double> cost(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const auto xi = mu.point(static_cast<std::size_t>(map_a[i]));
    for (std::size_t j = 0; j < n; ++j)
      cost[i * n + j] =
          detail::dist_pow(xi, nu.point(static_cast<std::size_t>(map_b[j])), p);
  }

  detail::TransportSimplex solver(std::move(supply), std::move(demand), std::move(cost));
  solver.solve(1000 * static_cast<std::int64_t>(m + n) + 100000);

  TransportPlan plan;
  plan.cost = solver.total_cost();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double f = solver.flow(static_cast<int>(i), static_cast<int>(j));
      if (f > 0.0)
        plan.entries.push_back({static_cast<std::size_t>(map_a[i]),
                                static_cast<std::size_t>(map_b[j]), f});
    }
  return {detail::root(plan.cost, p), std::move(plan)};
}

// Entropy-regularized W_p through log-domain Sinkhorn scaling. Stops when
// the worst marginal violation of the implied coupling drops below `tol` or
// after `max_iters` sweeps; returns (sum gamma_ij |x_i - y_j|^p)^(1/p).
// The result upper-bounds the exact distance and tightens as epsilon -> 0.
inline double sinkhorn(const DiscreteMeasure& mu, const DiscreteMeasure& nu, double p,
                       double epsilon, int max_iters = 10000, double tol = 1e-9) {
  detail::check_order(p);
  detail::check_same_dim(mu, nu);
  if (!(epsilon > 0.0)) throw ValidationError("sinkhorn: epsilon must be positive");
  if (max_iters < 1) throw ValidationError("sinkhorn: max_iters must be positive");

  std::vector<int> map_a, map_b;
  std::vector<double> a, b;
  for (std::size_t i = 0; i < mu.size(); ++i)
    if (mu.weight(i) > 0.0) {
      map_a.push_back(static_cast<int>(i));
      a.push_back(mu.weight(i));
    }
  for (std::size_t j = 0; j < nu.size(); ++j)
    if (nu.weight(j) > 0.0) {
      map_b.push_back(static_cast<int>(j));
      b.push_back(nu.weight(j));
    }
  const std::size_t m = a.size();
  const std::size_t n = b.size();

  std::vector<double> cost(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const auto xi = mu.point(static_cast<std::size_t>(map_a[i]));
    for (std::size_t j = 0; j < n; ++j)
      cost[i * n + j] =
          detail::dist_pow(xi, nu.point(static_cast<std::size_t>(map_b[j])), p);
  }

  std::vector<double> log_a(m), log_b(n), f(m, 0.0), g(n, 0.0), row(n), col(m);
  for (std::size_t i = 0; i < m; ++i) log_a[i] = std::log(a[i]);
  for (std::size_t j = 0; j < n; ++j) log_b[j] = std::log(b[j]);

  const auto logsumexp = [](std::span<const double> v) {
    double hi = v[0];
    for (double x : v) hi = std::max(hi, x);
    double s = 0.0;
    for (double x : v) s += std::exp(x - hi);
    return hi + std::log(s);
  };

  for (int it = 0; it < max_iters; ++it) {
    // f-update makes row marginals exact; g-update makes columns exact.
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j)
        row[j] = (g[j] - cost[i * n + j]) / epsilon + log_b[j];
      f[i] = -epsilon * logsumexp(row);
    }
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t i = 0; i < m; ++i)
        col[i] = (f[i] - cost[i * n + j]) / epsilon + log_a[i];
      g[j] = -epsilon * logsumexp(col);
    }
    double violation = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      double ri = 0.0;
      for (std::size_t j = 0; j < n; ++j)
        ri += std::exp((f[i] + g[j] - cost[i * n + j]) / epsilon + log_a[i] + log_b[j]);
      violation = std::max(violation, std::fabs(ri - a[i]));
    }
    if (violation < tol) break;
  }

  // Round the scaled kernel onto the coupling polytope (clamp rows, then
  // columns, then patch the residual with a rank-one term) so the returned
  // cost is the cost of a genuine coupling even when the sweep budget ran
  // out, and therefore never falls below the exact distance.
  std::vector<double> gamma(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      gamma[i * n + j] =
          std::exp((f[i] + g[j] - cost[i * n + j]) / epsilon + log_a[i] + log_b[j]);

  for (std::size_t i = 0; i < m; ++i) {
    double ri = 0.0;
    for (std::size_t j = 0; j < n; ++j) ri += gamma[i * n + j];
    if (ri > a[i] && ri > 0.0) {
      const double s = a[i] / ri;
      for (std::size_t j = 0; j < n; ++j) gamma[i * n + j] *= s;
    }
  }
  for (std::size_t j = 0; j < n; ++j) {
    double cj = 0.0;
    for (std::size_t i = 0; i < m; ++i) cj += gamma[i * n + j];
    if (cj > b[j] && cj > 0.0) {
      const double s = b[j] / cj;
      for (std::size_t i = 0; i < m; ++i) gamma[i * n + j] *= s;
    }
  }
  std::vector<double> err_a(m), err_b(n);
  double err_total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double ri = 0.0;
    for (std::size_t j = 0; j < n; ++j) ri += gamma[i * n + j];
    err_a[i] = std::max(a[i] - ri, 0.0);
    err_total += err_a[i];
  }
  for (std::size_t j = 0; j < n; ++j) {
    double cj = 0.0;
    for (std::size_t i = 0; i < m; ++i) cj += gamma[i * n + j];
    err_b[j] = std::max(b[j] - cj, 0.0);
  }
  if (err_total > 0.0)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        gamma[i * n + j] += err_a[i] * err_b[j] / err_total;

  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) total += gamma[i * n + j] * cost[i * n + j];
  return detail::root(total, p);
}

}  // namespace wrf
