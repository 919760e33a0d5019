#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "oracles.hpp"
#include "wrf/forest.hpp"
#include "wrf/measure.hpp"

using wrf::Dataset;
using wrf::Forest;
using wrf::ForestParams;
using wrf::Matrix;
using wrf::Rng;
using wrf::SplitRule;
using wrf::Tree;
using wrf::TreeNode;
using wrf::ValidationError;

namespace {

Matrix to_matrix(const std::vector<std::vector<double>>& rows) {
  Matrix m(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < rows[0].size(); ++k) m(i, k) = rows[i][k];
  return m;
}

Matrix col_matrix(const std::vector<double>& v) {
  Matrix m(v.size(), 1);
  std::copy(v.begin(), v.end(), m.data.begin());
  return m;
}

bool trees_equal(const Tree& a, const Tree& b) {
  if (a.subsample != b.subsample || a.slots != b.slots) return false;
  if (a.nodes.size() != b.nodes.size()) return false;
  for (std::size_t i = 0; i < a.nodes.size(); ++i) {
    const TreeNode& u = a.nodes[i];
    const TreeNode& v = b.nodes[i];
    if (u.dim != v.dim || u.threshold != v.threshold || u.left != v.left ||
        u.right != v.right || u.first != v.first || u.count != v.count)
      return false;
  }
  return true;
}

bool forests_equal(const Forest& a, const Forest& b) {
  if (a.trees.size() != b.trees.size()) return false;
  for (std::size_t j = 0; j < a.trees.size(); ++j)
    if (!trees_equal(a.trees[j], b.trees[j])) return false;
  return true;
}

double split_midpoint(double lo, double hi) {
  const double mid = lo + 0.5 * (hi - lo);
  return mid < hi ? mid : lo;
}

struct BruteChoice {
  int dim = -1;
  double threshold = 0.0;
  double gain = -1e300;
};

// Exhaustive reference for best_split: every midpoint between consecutive
// distinct values on every dim, scored through the public gain operators.
BruteChoice brute_best(const Dataset& ds, const std::vector<int>& rows,
                       const std::vector<int>& try_dims, const ForestParams& prm) {
  std::vector<int> dims = try_dims;
  std::sort(dims.begin(), dims.end());

  Matrix cell(rows.size(), ds.dim_y());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < ds.dim_y(); ++k)
      cell(i, k) = ds.y(static_cast<std::size_t>(rows[i]), k);

  BruteChoice best;
  for (int dim : dims) {
    std::vector<double> xs;
    xs.reserve(rows.size());
    for (int r : rows)
      xs.push_back(ds.x(static_cast<std::size_t>(r), static_cast<std::size_t>(dim)));
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());

    for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
      const double thr = split_midpoint(xs[i], xs[i + 1]);
      std::vector<std::vector<double>> lrows, rrows;
      for (int r : rows) {
        std::vector<double> yr(ds.y.row(static_cast<std::size_t>(r)).begin(),
                               ds.y.row(static_cast<std::size_t>(r)).end());
        const double xv = ds.x(static_cast<std::size_t>(r), static_cast<std::size_t>(dim));
        (xv <= thr ? lrows : rrows).push_back(std::move(yr));
      }
      const double gain = prm.criterion == SplitRule::intra_l2
                              ? wrf::intra_gain(cell, to_matrix(lrows), to_matrix(rrows))
                              : wrf::inter_gain(cell, to_matrix(lrows), to_matrix(rrows),
                                                prm.p);
      if (gain > best.gain) {
        best.gain = gain;
        best.dim = dim;
        best.threshold = thr;
      }
    }
  }
  return best;
}

Dataset random_dataset(Rng& rng, std::size_t n, std::size_t d, std::size_t dp,
                       bool gridded_x) {
  Dataset ds;
  ds.x = Matrix(n, d);
  ds.y = Matrix(n, dp);
  for (double& v : ds.x.data)
    v = gridded_x ? static_cast<double>(rng.below(4)) : rng.uniform(-2.0, 2.0);
  for (double& v : ds.y.data) v = rng.uniform(-3.0, 3.0);
  return ds;
}

}  // namespace

TEST_CASE("intra gain matches the hand example and every oracle form") {
  const Matrix cell = col_matrix({0.0, 0.0, 2.0, 2.0});
  const Matrix left = col_matrix({0.0, 0.0});
  const Matrix right = col_matrix({2.0, 2.0});
  CHECK(wrf::intra_gain(cell, left, right) == doctest::Approx(1.0).epsilon(1e-14));

  const std::vector<std::vector<double>> y_cell = {{0.0}, {0.0}, {2.0}, {2.0}};
  const std::vector<int> mask = {1, 1, 0, 0};
  CHECK(oracle::variance_gain(y_cell, mask) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(oracle::interclass_gain(y_cell, mask) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(oracle::pairwise_gain(y_cell, mask) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("intra gain equals all three reference forms on random cells") {
  Rng rng(4101);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(30);
    const std::size_t dp = 1 + rng.below(3);
    std::vector<std::vector<double>> y_cell(n, std::vector<double>(dp));
    for (auto& row : y_cell)
      for (double& v : row) v = rng.uniform(-5.0, 5.0);

    std::vector<int> mask(n, 0);
    std::size_t nl = 0;
    while (nl == 0 || nl == n) {
      nl = 0;
      for (auto& b : mask) {
        b = rng.below(2) ? 1 : 0;
        nl += static_cast<std::size_t>(b);
      }
    }

    std::vector<std::vector<double>> lrows, rrows;
    for (std::size_t i = 0; i < n; ++i) (mask[i] ? lrows : rrows).push_back(y_cell[i]);
    const double lib = wrf::intra_gain(to_matrix(y_cell), to_matrix(lrows), to_matrix(rrows));

    const double v1 = oracle::variance_gain(y_cell, mask);
    const double v2 = oracle::interclass_gain(y_cell, mask);
    const double v3 = oracle::pairwise_gain(y_cell, mask);
    const double scale = std::max({1.0, std::fabs(v1)});
    CHECK(std::fabs(lib - v1) <= 1e-10 * scale);
    CHECK(std::fabs(lib - v2) <= 1e-10 * scale);
    CHECK(std::fabs(lib - v3) <= 1e-10 * scale);
    CHECK(lib >= -1e-12);
  }
}

TEST_CASE("inter gain matches hand examples") {
  const Matrix cell = col_matrix({0.0, 2.0});
  const Matrix left = col_matrix({0.0});
  const Matrix right = col_matrix({2.0});
  CHECK(wrf::inter_gain(cell, left, right, 2.0) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(wrf::inter_gain(cell, left, right, 1.0) == doctest::Approx(1.0).epsilon(1e-14));

  const Matrix cell3 = col_matrix({0.0, 1.0, 5.0});
  CHECK(wrf::inter_gain(cell3, col_matrix({0.0, 1.0}), col_matrix({5.0}), 1.0) ==
        doctest::Approx(2.0).epsilon(1e-12));
  CHECK(wrf::inter_gain(cell3, col_matrix({0.0}), col_matrix({1.0, 5.0}), 1.0) ==
        doctest::Approx(4.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("inter gain agrees with the exact transport solver") {
  Rng rng(4102);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = 3 + rng.below(10);
    std::vector<double> cell(n);
    for (double& v : cell) v = rng.uniform(-4.0, 4.0);
    const std::size_t nl = 1 + rng.below(n - 1);
    std::vector<double> left(cell.begin(), cell.begin() + static_cast<long>(nl));
    std::vector<double> right(cell.begin() + static_cast<long>(nl), cell.end());

    const double p = std::array{1.0, 2.0, 1.5, 3.0}[trial % 4];
    const double lib =
        wrf::inter_gain(col_matrix(cell), col_matrix(left), col_matrix(right), p);

    const auto mu_cell = wrf::make_measure_1d(cell);
    const double wl = wrf::wasserstein_exact(wrf::make_measure_1d(left), mu_cell, p).first;
    const double wr = wrf::wasserstein_exact(wrf::make_measure_1d(right), mu_cell, p).first;
    const double na = static_cast<double>(n);
    const double ref = (static_cast<double>(nl) / na) * std::pow(wl, p) +
                       (static_cast<double>(n - nl) / na) * std::pow(wr, p);
    CHECK(std::fabs(lib - ref) <= 1e-9 * std::max(1.0, std::fabs(ref)));
    CHECK(lib >= -1e-12);
  }
}

TEST_CASE("gain operators reject malformed partitions") {
  const Matrix cell = col_matrix({0.0, 2.0});
  CHECK_THROWS_AS(wrf::intra_gain(cell, col_matrix({0.0}), col_matrix({1.0})),
                  ValidationError);
  CHECK_THROWS_AS(wrf::intra_gain(cell, Matrix(0, 1), cell), ValidationError);
  CHECK_THROWS_AS(
      wrf::intra_gain(cell, col_matrix({0.0, 2.0}), col_matrix({0.0, 2.0})),
      ValidationError);
  CHECK_THROWS_AS(wrf::inter_gain(cell, col_matrix({0.0}), col_matrix({2.0}), 0.5),
                  ValidationError);
  const Matrix wide(2, 2);
  CHECK_THROWS_AS(wrf::inter_gain(wide, wide, wide, 2.0), ValidationError);
}

TEST_CASE("best_split finds the frozen split on the staircase example") {
  Dataset ds;
  ds.x = col_matrix({1.0, 2.0, 3.0, 4.0});
  ds.y = col_matrix({0.0, 0.0, 2.0, 2.0});
  const std::vector<int> rows = {0, 1, 2, 3};
  const std::vector<int> dims = {0};
  ForestParams prm;

  const auto choice = wrf::best_split(ds, rows, dims, prm);
  REQUIRE(choice.has_value());
  CHECK(choice->dim == 0);
  CHECK(choice->threshold == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(choice->gain == doctest::Approx(1.0).epsilon(1e-14));

  const Matrix cell = col_matrix({0.0, 0.0, 2.0, 2.0});
  CHECK(wrf::intra_gain(cell, col_matrix({0.0}), col_matrix({0.0, 2.0, 2.0})) ==
        doctest::Approx(1.0 / 3.0).epsilon(1e-13));
  CHECK(wrf::intra_gain(cell, col_matrix({0.0, 0.0, 2.0}), col_matrix({2.0})) ==
        doctest::Approx(1.0 / 3.0).epsilon(1e-13));
}

TEST_CASE("best_split on the inter criterion picks the frozen cut") {
  Dataset ds;
  ds.x = col_matrix({1.0, 2.0, 3.0});
  ds.y = col_matrix({0.0, 1.0, 5.0});
  ForestParams prm;
  prm.criterion = SplitRule::inter_wp;
  prm.p = 1.0;

  const std::vector<int> rows = {0, 1, 2};
  const std::vector<int> dims = {0};
  const auto choice = wrf::best_split(ds, rows, dims, prm);
  REQUIRE(choice.has_value());
  CHECK(choice->dim == 0);
  CHECK(choice->threshold == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(choice->gain == doctest::Approx(2.0).epsilon(1e-13));
}

TEST_CASE("best_split matches exhaustive search over all candidates") {
  Rng rng(4103);
  for (int trial = 0; trial < 40; ++trial) {
    const bool inter = trial % 2 == 1;
    const std::size_t n = 4 + rng.below(20);
    const std::size_t d = 1 + rng.below(3);
    const std::size_t dp = inter ? 1 : 1 + rng.below(2);
    const Dataset ds = random_dataset(rng, n, d, dp, trial % 4 < 2);

    ForestParams prm;
    if (inter) {
      prm.criterion = SplitRule::inter_wp;
      prm.p = std::array{1.0, 2.0, 1.7}[trial % 3];
    }

    std::vector<int> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = static_cast<int>(i);
    std::vector<int> dims(d);
    for (std::size_t k = 0; k < d; ++k) dims[k] = static_cast<int>(k);

    const auto choice = wrf::best_split(ds, rows, dims, prm);
    const BruteChoice ref = brute_best(ds, rows, dims, prm);
    if (ref.dim < 0) {
      CHECK_FALSE(choice.has_value());
      continue;
    }
    REQUIRE(choice.has_value());
    CHECK(choice->dim == ref.dim);
    CHECK(choice->threshold == ref.threshold);
    CHECK(std::fabs(choice->gain - ref.gain) <= 1e-12 * std::max(1.0, std::fabs(ref.gain)));
    CHECK(choice->gain >= -1e-12);
  }
}

TEST_CASE("best_split validates its inputs") {
  Dataset ds;
  ds.x = col_matrix({1.0, 2.0});
  ds.y = to_matrix({{0.0, 1.0}, {1.0, 0.0}});
  ForestParams prm;
  const std::vector<int> rows = {0, 1};
  const std::vector<int> dims = {0};

  CHECK_THROWS_AS(wrf::best_split(ds, std::vector<int>{0}, dims, prm), ValidationError);
  CHECK_THROWS_AS(wrf::best_split(ds, rows, std::vector<int>{}, prm), ValidationError);
  CHECK_THROWS_AS(wrf::best_split(ds, std::vector<int>{0, 5}, dims, prm), ValidationError);
  CHECK_THROWS_AS(wrf::best_split(ds, rows, std::vector<int>{3}, prm), ValidationError);

  ForestParams inter;
  inter.criterion = SplitRule::inter_wp;
  CHECK_THROWS_AS(wrf::best_split(ds, rows, dims, inter), ValidationError);
}

TEST_CASE("constant responses still produce a zero-gain split") {
  Dataset ds;
  ds.x = col_matrix({0.0, 1.0, 2.0, 3.0, 4.0, 5.0});
  ds.y = col_matrix({5.0, 5.0, 5.0, 5.0, 5.0, 5.0});
  ForestParams prm;
  prm.m_trees = 1;
  prm.subsample_size = 6;
  prm.mtry = 1;
  prm.nodesize = 2;

  std::vector<int> rows = {0, 1, 2, 3, 4, 5};
  const auto choice = wrf::best_split(ds, rows, std::vector<int>{0}, prm);
  REQUIRE(choice.has_value());
  CHECK(choice->gain == 0.0);
  CHECK(choice->threshold == doctest::Approx(0.5).epsilon(1e-15));

  const Forest forest = wrf::fit(ds, prm);
  const Tree& tree = forest.trees[0];
  CHECK_FALSE(tree.nodes[0].is_leaf());
  CHECK(tree.nodes.size() == 11);
  for (const TreeNode& node : tree.nodes)
    if (node.is_leaf()) CHECK(node.count == 1);
}

TEST_CASE("identical covariate rows stop a cell unconditionally") {
  Dataset ds;
  ds.x = to_matrix({{1.0, 2.0}, {1.0, 2.0}, {1.0, 2.0}, {1.0, 2.0}, {1.0, 2.0}});
  ds.y = col_matrix({1.0, 2.0, 3.0, 4.0, 5.0});
  ForestParams prm;
  prm.m_trees = 3;
  prm.subsample_size = 5;
  prm.mtry = 2;
  prm.nodesize = 2;

  const Forest forest = wrf::fit(ds, prm);
  for (const Tree& tree : forest.trees) {
    CHECK(tree.nodes.size() == 1);
    CHECK(tree.nodes[0].is_leaf());
  }
  const std::vector<double> q = {1.0, 2.0};
  const auto mean = wrf::predict_mean(forest, q);
  CHECK(mean[0] == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("trees satisfy the structural invariants") {
  Rng rng(4104);
  for (const bool with_repl : {false, true}) {
    const Dataset ds = random_dataset(rng, 60, 3, 1, false);
    ForestParams prm;
    prm.m_trees = 12;
    prm.subsample_size = 30;
    prm.with_replacement = with_repl;
    prm.mtry = 2;
    prm.nodesize = 4;
    prm.seed = 7;

    const Forest forest = wrf::fit(ds, prm);
    REQUIRE(forest.trees.size() == 12);
    for (const Tree& tree : forest.trees) {
      REQUIRE(tree.subsample.size() == 30);
      for (int r : tree.subsample) {
        CHECK(r >= 0);
        CHECK(r < 60);
      }
      std::vector<int> sorted_slots = tree.slots;
      std::sort(sorted_slots.begin(), sorted_slots.end());
      for (int i = 0; i < 30; ++i) CHECK(sorted_slots[static_cast<std::size_t>(i)] == i);

      REQUIRE_FALSE(tree.nodes.empty());
      CHECK(tree.nodes[0].first == 0);
      CHECK(tree.nodes[0].count == 30);

      std::vector<int> covered(30, 0);
      for (const TreeNode& node : tree.nodes) {
        CHECK(node.count >= 1);
        if (node.is_leaf()) {
          for (int s = node.first; s < node.first + node.count; ++s)
            covered[static_cast<std::size_t>(s)] += 1;
        } else {
          CHECK(node.count >= prm.nodesize);
          const TreeNode& l = tree.nodes[static_cast<std::size_t>(node.left)];
          const TreeNode& r = tree.nodes[static_cast<std::size_t>(node.right)];
          CHECK(l.first == node.first);
          CHECK(l.first + l.count == r.first);
          CHECK(r.first + r.count == node.first + node.count);
          CHECK(node.dim >= 0);
          CHECK(node.dim < 3);
        }
      }
      for (int c : covered) CHECK(c == 1);
    }
  }
}

TEST_CASE("prediction weights form a probability vector routed per tree") {
  Rng rng(4105);
  const Dataset ds = random_dataset(rng, 50, 2, 1, false);
  ForestParams prm;
  prm.m_trees = 9;
  prm.subsample_size = 25;
  prm.mtry = 1;
  prm.nodesize = 3;
  prm.seed = 11;
  const Forest forest = wrf::fit(ds, prm);

  for (int trial = 0; trial < 20; ++trial) {
    const std::vector<double> q = {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
    const auto pw = wrf::weights(forest, q);
    REQUIRE(pw.alpha.size() == 50);
    double total = 0.0;
    for (double a : pw.alpha) {
      CHECK(a >= 0.0);
      total += a;
    }
    CHECK(std::fabs(total - 1.0) <= 1e-12);

    const auto measure = wrf::predict_measure(forest, q);
    const auto mean = wrf::predict_mean(forest, q);
    CHECK(measure.dim() == 1);
    CHECK(mean.size() == 1);
    CHECK(measure.mean()[0] == doctest::Approx(mean[0]).epsilon(1e-12));
  }
}

TEST_CASE("hand-built two-tree forest yields the frozen weights") {
  Forest f;
  f.params.m_trees = 2;
  f.dim_x = 1;
  f.method = "wrf";
  f.training_y = col_matrix({10.0, 20.0, 30.0});

  Tree a;
  a.nodes = {TreeNode{0, 0.5, 1, 2, 0, 2}, TreeNode{-1, 0.0, -1, -1, 0, 1},
             TreeNode{-1, 0.0, -1, -1, 1, 1}};
  a.subsample = {0, 1};
  a.slots = {0, 1};

  Tree b;
  b.nodes = {TreeNode{-1, 0.0, -1, -1, 0, 2}};
  b.subsample = {1, 2};
  b.slots = {0, 1};
  f.trees = {a, b};

  const std::vector<double> q0 = {0.0};
  const auto w0 = wrf::weights(f, q0);
  CHECK(w0.alpha[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(w0.alpha[1] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(w0.alpha[2] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(wrf::predict_mean(f, q0)[0] == doctest::Approx(17.5).epsilon(1e-13));

  const std::vector<double> q1 = {1.0};
  const auto w1 = wrf::weights(f, q1);
  CHECK(w1.alpha[0] == 0.0);
  CHECK(w1.alpha[1] == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(w1.alpha[2] == doctest::Approx(0.25).epsilon(1e-15));

  const auto measure = wrf::predict_measure(f, q0);
  REQUIRE(measure.size() == 3);
  CHECK(measure.point(0)[0] == 10.0);
  CHECK(measure.weight(0) == doctest::Approx(0.5).epsilon(1e-15));

  const std::vector<int> only_b = {1};
  const auto wb = wrf::weights_over(f, q0, only_b);
  CHECK(wb.alpha[0] == 0.0);
  CHECK(wb.alpha[1] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(wb.alpha[2] == doctest::Approx(0.5).epsilon(1e-15));

  CHECK_THROWS_AS(wrf::weights(f, std::vector<double>{0.0, 1.0}), ValidationError);
  CHECK_THROWS_AS(wrf::weights_over(f, q0, std::vector<int>{}), ValidationError);
}

TEST_CASE("duplicate subsample slots carry double mass") {
  Forest f;
  f.params.m_trees = 1;
  f.dim_x = 1;
  f.training_y = col_matrix({10.0, 20.0, 30.0});

  Tree c;
  c.nodes = {TreeNode{-1, 0.0, -1, -1, 0, 2}};
  c.subsample = {2, 2};
  c.slots = {0, 1};
  f.trees = {c};

  const std::vector<double> q = {0.0};
  const auto pw = wrf::weights(f, q);
  CHECK(pw.alpha[0] == 0.0);
  CHECK(pw.alpha[1] == 0.0);
  CHECK(pw.alpha[2] == doctest::Approx(1.0).epsilon(1e-15));
  const auto measure = wrf::predict_measure(f, q);
  CHECK(measure.size() == 1);
  CHECK(measure.point(0)[0] == 30.0);
}

TEST_CASE("fitting is deterministic in the seed and the thread count") {
  Rng rng(4106);
  const Dataset ds = random_dataset(rng, 40, 2, 1, false);
  ForestParams prm;
  prm.m_trees = 6;
  prm.subsample_size = 20;
  prm.mtry = 2;
  prm.nodesize = 3;
  prm.seed = 99;

  const Forest f1 = wrf::fit(ds, prm);
  const Forest f2 = wrf::fit(ds, prm);
  CHECK(forests_equal(f1, f2));

  const Forest f3 = wrf::fit(ds, prm, 3);
  CHECK(forests_equal(f1, f3));

  ForestParams other = prm;
  other.seed = 100;
  const Forest f4 = wrf::fit(ds, other);
  CHECK_FALSE(forests_equal(f1, f4));

  for (std::size_t j = 0; j < f1.trees.size(); ++j) {
    Rng stream = Rng::substream(prm.seed, static_cast<std::uint64_t>(j));
    const Tree direct = wrf::build_tree(ds, prm, stream);
    CHECK(trees_equal(f1.trees[j], direct));
  }
}

TEST_CASE("fit with inter criterion grows a usable forest") {
  Rng rng(4107);
  const Dataset ds = random_dataset(rng, 50, 2, 1, false);
  ForestParams prm;
  prm.m_trees = 4;
  prm.subsample_size = 25;
  prm.mtry = 2;
  prm.nodesize = 5;
  prm.criterion = SplitRule::inter_wp;
  prm.p = 2.0;
  prm.seed = 3;

  const Forest forest = wrf::fit(ds, prm);
  const std::vector<double> q = {0.1, -0.4};
  const auto pw = wrf::weights(forest, q);
  double total = 0.0;
  for (double a : pw.alpha) total += a;
  CHECK(std::fabs(total - 1.0) <= 1e-12);
}

TEST_CASE("multivariate responses train and predict with matching shapes") {
  Rng rng(4108);
  const Dataset ds = random_dataset(rng, 40, 2, 2, false);
  ForestParams prm;
  prm.m_trees = 5;
  prm.subsample_size = 20;
  prm.mtry = 2;
  prm.nodesize = 4;

  const Forest forest = wrf::fit(ds, prm);
  const std::vector<double> q = {0.0, 0.0};
  const auto mean = wrf::predict_mean(forest, q);
  REQUIRE(mean.size() == 2);
  const auto measure = wrf::predict_measure(forest, q);
  CHECK(measure.dim() == 2);
  const auto mm = measure.mean();
  CHECK(mm[0] == doctest::Approx(mean[0]).epsilon(1e-12));
  CHECK(mm[1] == doctest::Approx(mean[1]).epsilon(1e-12));
}

TEST_CASE("response standardization is scale equivariant") {
  Rng rng(4109);
  Dataset ds = random_dataset(rng, 50, 2, 1, false);
  ForestParams prm;
  prm.m_trees = 6;
  prm.subsample_size = 25;
  prm.mtry = 2;
  prm.nodesize = 4;
  prm.standardize_response = true;
  prm.seed = 21;

  Dataset scaled = ds;
  for (double& v : scaled.y.data) v *= 3.7;

  const Forest f1 = wrf::fit(ds, prm);
  const Forest f2 = wrf::fit(scaled, prm);
  CHECK(forests_equal(f1, f2));
  REQUIRE(f1.normalization.size() == 1);
  REQUIRE(f2.normalization.size() == 1);
  CHECK(f2.normalization[0] ==
        doctest::Approx(3.7 * f1.normalization[0]).epsilon(1e-12));

  const std::vector<double> q = {0.3, -0.7};
  CHECK(wrf::predict_mean(f2, q)[0] ==
        doctest::Approx(3.7 * wrf::predict_mean(f1, q)[0]).epsilon(1e-9));

  Dataset flat = ds;
  flat.y = Matrix(50, 2);
  for (std::size_t i = 0; i < 50; ++i) {
    flat.y(i, 0) = ds.y(i, 0);
    flat.y(i, 1) = 5.0;
  }
  const Forest f3 = wrf::fit(flat, prm);
  REQUIRE(f3.normalization.size() == 2);
  CHECK(f3.normalization[1] == 1.0);
}

TEST_CASE("fit rejects invalid parameters") {
  Rng rng(4110);
  const Dataset ds = random_dataset(rng, 20, 2, 2, false);
  const auto expect_throw = [&](auto mutate) {
    ForestParams prm;
    prm.m_trees = 2;
    prm.subsample_size = 10;
    prm.mtry = 1;
    prm.nodesize = 2;
    mutate(prm);
    CHECK_THROWS_AS(wrf::fit(ds, prm), ValidationError);
  };

  expect_throw([](ForestParams& p) { p.m_trees = 0; });
  expect_throw([](ForestParams& p) { p.subsample_size = 1; });
  expect_throw([](ForestParams& p) { p.subsample_size = 21; });
  {
    ForestParams prm;
    prm.m_trees = 2;
    prm.subsample_size = 35;
    prm.with_replacement = true;
    prm.mtry = 1;
    prm.nodesize = 2;
    const Forest oversampled = wrf::fit(ds, prm);
    CHECK(oversampled.trees[0].subsample.size() == 35);
  }
  expect_throw([](ForestParams& p) { p.mtry = 0; });
  expect_throw([](ForestParams& p) { p.mtry = 3; });
  expect_throw([](ForestParams& p) { p.nodesize = 1; });
  expect_throw([](ForestParams& p) { p.nodesize = 11; });
  expect_throw([](ForestParams& p) { p.criterion = SplitRule::inter_wp; });
  expect_throw([](ForestParams& p) {
    p.criterion = SplitRule::inter_wp;
    p.p = 0.5;
  });
}
