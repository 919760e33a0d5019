#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "wrf/hte.hpp"
#include "wrf/synth.hpp"

using wrf::ForestParams;
using wrf::HTEDataset;
using wrf::HTEModel;
using wrf::Matrix;
using wrf::Rng;
using wrf::Scenario;
using wrf::ScenarioSpec;
using wrf::ValidationError;

namespace {

// Paired arms over identical covariates: row i and row half+i share x, the
// treated copy's response is shifted by a known constant.
HTEDataset paired_fixture(std::size_t half, double shift, std::uint64_t seed) {
  Rng rng(seed);
  HTEDataset data;
  data.x = Matrix(2 * half, 3);
  data.y_observed = Matrix(2 * half, 1);
  data.y0 = Matrix(2 * half, 1);
  data.y1 = Matrix(2 * half, 1);
  data.t.resize(2 * half);
  for (std::size_t i = 0; i < half; ++i) {
    double y = 0.5 * rng.normal();
    for (std::size_t j = 0; j < 3; ++j) {
      const double v = rng.uniform();
      data.x(i, j) = v;
      data.x(half + i, j) = v;
      y += v;
    }
    data.t[i] = 0;
    data.t[half + i] = 1;
    data.y_observed(i, 0) = y;
    data.y_observed(half + i, 0) = y + shift;
    data.y0(i, 0) = data.y0(half + i, 0) = y;
    data.y1(i, 0) = data.y1(half + i, 0) = y + shift;
  }
  return data;
}

ForestParams arm_params(std::uint64_t seed, int subsample, int m_trees = 30) {
  ForestParams prm;
  prm.m_trees = m_trees;
  prm.subsample_size = subsample;
  prm.mtry = 2;
  prm.nodesize = 3;
  prm.seed = seed;
  return prm;
}

bool forests_equal(const wrf::Forest& a, const wrf::Forest& b) {
  if (a.trees.size() != b.trees.size()) return false;
  for (std::size_t j = 0; j < a.trees.size(); ++j) {
    if (a.trees[j].subsample != b.trees[j].subsample) return false;
    if (a.trees[j].slots != b.trees[j].slots) return false;
    if (a.trees[j].nodes.size() != b.trees[j].nodes.size()) return false;
    for (std::size_t k = 0; k < a.trees[j].nodes.size(); ++k) {
      const auto& u = a.trees[j].nodes[k];
      const auto& v = b.trees[j].nodes[k];
      if (u.dim != v.dim || u.threshold != v.threshold || u.left != v.left ||
          u.right != v.right || u.first != v.first || u.count != v.count)
        return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("identical arms give a zero effect and zero distance") {
  const HTEDataset data = paired_fixture(40, 0.0, 6001);
  const HTEModel model = wrf::fit_hte(data, arm_params(5, 20), arm_params(5, 20));

  CHECK(model.group0.size() == 40);
  CHECK(model.group1.size() == 40);
  CHECK(forests_equal(model.forest0, model.forest1));

  Rng rng(6002);
  for (int trial = 0; trial < 10; ++trial) {
    const std::vector<double> q = {rng.uniform(), rng.uniform(), rng.uniform()};
    CHECK(std::fabs(wrf::estimate_cate(model, q)) <= 1e-12);
    CHECK(wrf::lambda_p(model, q, 2.0) <= 1e-12);
    CHECK(wrf::lambda_p(model, q, 1.0) <= 1e-12);
  }
}

TEST_CASE("a constant treatment shift is recovered by cate and lambda") {
  const double shift = 3.0;
  const HTEDataset data = paired_fixture(60, shift, 6003);
  const HTEModel model = wrf::fit_hte(data, arm_params(9, 30), arm_params(9, 30));

  Rng rng(6004);
  for (int trial = 0; trial < 10; ++trial) {
    const std::vector<double> q = {0.2 + 0.6 * rng.uniform(), 0.2 + 0.6 * rng.uniform(),
                                   0.2 + 0.6 * rng.uniform()};
    const double tau = wrf::estimate_cate(model, q);
    CHECK(std::fabs(tau - shift) <= 0.1);
    CHECK(std::fabs(wrf::lambda_p(model, q, 1.0) - shift) <= 0.1);
    CHECK(std::fabs(wrf::lambda_p(model, q, 2.0) - shift) <= 0.1);

    const auto pi0 = wrf::estimate_pi(model, 0, q);
    const auto pi1 = wrf::estimate_pi(model, 1, q);
    CHECK(std::fabs(tau - (pi1.mean()[0] - pi0.mean()[0])) <= 1e-12);

    double lo = 0.0;
    for (const double p : {1.0, 1.5, 2.0, 3.0}) {
      const double lp = wrf::lambda_p(model, q, p);
      CHECK(lp >= lo - 1e-9);
      lo = lp;
    }
  }
}

TEST_CASE("swapping the arm labels negates cate and preserves lambda") {
  const HTEDataset data = paired_fixture(50, 1.7, 6005);
  const HTEModel model = wrf::fit_hte(data, arm_params(3, 25), arm_params(4, 25));

  HTEModel swapped;
  swapped.forest0 = model.forest1;
  swapped.forest1 = model.forest0;
  swapped.group0 = model.group1;
  swapped.group1 = model.group0;
  swapped.x = model.x;

  Rng rng(6006);
  for (int trial = 0; trial < 8; ++trial) {
    const std::vector<double> q = {rng.uniform(), rng.uniform(), rng.uniform()};
    CHECK(wrf::estimate_cate(swapped, q) == -wrf::estimate_cate(model, q));
    CHECK(std::fabs(wrf::lambda_p(swapped, q, 2.0) - wrf::lambda_p(model, q, 2.0)) <=
          1e-12);
  }
}

TEST_CASE("estimated arm measures stay on the arm's training responses") {
  const HTEDataset data = paired_fixture(30, 2.0, 6007);
  const HTEModel model = wrf::fit_hte(data, arm_params(1, 15), arm_params(2, 15));

  std::vector<double> treated_y;
  for (int r : model.group1) treated_y.push_back(data.y_observed(static_cast<std::size_t>(r), 0));
  std::sort(treated_y.begin(), treated_y.end());

  const std::vector<double> q = {0.4, 0.6, 0.5};
  const auto pi1 = wrf::estimate_pi(model, 1, q);
  double total = 0.0;
  for (std::size_t i = 0; i < pi1.size(); ++i) {
    total += pi1.weight(i);
    CHECK(std::binary_search(treated_y.begin(), treated_y.end(), pi1.point(i)[0]));
  }
  CHECK(std::fabs(total - 1.0) <= 1e-12);
}

TEST_CASE("refitting the same data and params reproduces the model") {
  const HTEDataset data = paired_fixture(25, 0.5, 6008);
  const auto p0 = arm_params(10, 12);
  const auto p1 = arm_params(11, 12);
  const HTEModel a = wrf::fit_hte(data, p0, p1);
  const HTEModel b = wrf::fit_hte(data, p0, p1);
  CHECK(forests_equal(a.forest0, b.forest0));
  CHECK(forests_equal(a.forest1, b.forest1));
  CHECK(a.group0 == b.group0);
  CHECK(a.group1 == b.group1);
}

TEST_CASE("out-of-bag lambda covers every row when subsampling leaves gaps") {
  const HTEDataset zero = paired_fixture(30, 0.0, 6009);
  const HTEDataset shifted = paired_fixture(30, 3.0, 6009);

  const auto params = arm_params(13, 15, 40);
  const HTEModel model_zero = wrf::fit_hte(zero, params, params);
  const HTEModel model_shift = wrf::fit_hte(shifted, params, params);

  const auto oob_zero = wrf::oob_lambda(model_zero, 1.0);
  const auto oob_shift = wrf::oob_lambda(model_shift, 1.0);
  CHECK(oob_zero.skipped.empty());
  CHECK(oob_zero.values.size() == 60);
  CHECK(oob_shift.skipped.empty());

  const auto median_of = [](const wrf::OOBLambdaResult& r) {
    std::vector<double> v;
    for (const auto& e : r.values) {
      CHECK(e.lambda >= 0.0);
      v.push_back(e.lambda);
    }
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  const double median_zero = median_of(oob_zero);
  const double median_shift = median_of(oob_shift);
  CHECK(median_shift > 1.0);
  CHECK(median_zero < median_shift);
}

TEST_CASE("out-of-bag lambda reports rows no tree excludes") {
  const HTEDataset data = paired_fixture(10, 1.0, 6010);
  ForestParams prm = arm_params(17, 10, 5);  // subsample == arm size, no replacement
  prm.nodesize = 2;
  const HTEModel model = wrf::fit_hte(data, prm, prm);
  const auto oob = wrf::oob_lambda(model, 2.0);
  CHECK(oob.values.empty());
  CHECK(oob.skipped.size() == 20);
}

TEST_CASE("hte layer validates its inputs") {
  HTEDataset data = paired_fixture(10, 1.0, 6011);
  const auto params = arm_params(1, 5, 3);

  HTEDataset all_treated = data;
  std::fill(all_treated.t.begin(), all_treated.t.end(), 1);
  CHECK_THROWS_AS(wrf::fit_hte(all_treated, params, params), ValidationError);

  HTEDataset all_control = data;
  std::fill(all_control.t.begin(), all_control.t.end(), 0);
  CHECK_THROWS_AS(wrf::fit_hte(all_control, params, params), ValidationError);

  HTEDataset bad_label = data;
  bad_label.t[3] = 2;
  CHECK_THROWS_AS(wrf::fit_hte(bad_label, params, params), ValidationError);

  const HTEModel model = wrf::fit_hte(data, params, params);
  const std::vector<double> q = {0.5, 0.5, 0.5};
  CHECK_THROWS_AS(wrf::estimate_pi(model, 2, q), ValidationError);
  CHECK_THROWS_AS(wrf::lambda_p(model, q, 0.5), ValidationError);
  CHECK_THROWS_AS(wrf::oob_lambda(model, 0.5), ValidationError);
  CHECK_THROWS_AS(wrf::estimate_pi(model, 0, std::vector<double>{0.5}), ValidationError);
}

TEST_CASE("multivariate arms support lambda but not cate") {
  ScenarioSpec spec;
  spec.kind = Scenario::multivariate_cost;
  spec.n = 120;
  spec.d = 6;
  spec.seed = 42;
  const HTEDataset data = wrf::generate(spec);

  ForestParams prm;
  prm.m_trees = 8;
  prm.subsample_size = 20;
  prm.with_replacement = true;
  prm.mtry = 3;
  prm.nodesize = 4;
  prm.seed = 2;
  const HTEModel model = wrf::fit_hte(data, prm, prm);

  const std::vector<double> q(6, 0.5);
  CHECK_THROWS_AS(wrf::estimate_cate(model, q), ValidationError);
  const double lambda = wrf::lambda_p(model, q, 2.0);
  CHECK(lambda >= 0.0);
  CHECK(wrf::estimate_pi(model, 1, q).dim() == 2);
}

TEST_CASE("the study scenario shows the treated atom and a clear effect signal") {
  ScenarioSpec spec;
  spec.kind = Scenario::main;
  spec.n = 500;
  spec.d = 6;
  spec.seed = 7;
  const HTEDataset data = wrf::generate(spec);

  ForestParams prm;
  prm.m_trees = 60;
  prm.subsample_size = 200;
  prm.with_replacement = true;
  prm.mtry = 3;
  prm.nodesize = 2;
  prm.seed = 11;
  ForestParams prm1 = prm;
  prm1.seed = 12;
  const HTEModel model = wrf::fit_hte(data, prm, prm1);

  const std::vector<double> x(6, 0.5);
  const auto pi1 = wrf::estimate_pi(model, 1, x);
  double atom_mass = 0.0;
  for (std::size_t i = 0; i < pi1.size(); ++i)
    if (pi1.point(i)[0] == -1.0) atom_mass += pi1.weight(i);
  CHECK(atom_mass >= 0.3);
  CHECK(atom_mass <= 0.7);

  CHECK(std::fabs(wrf::estimate_cate(model, x) - wrf::true_cate(x)) < 1.5);
  CHECK(wrf::lambda_p(model, x, 2.0) > 1.0);
}
