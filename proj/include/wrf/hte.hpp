#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include "wrf/forest.hpp"
#include "wrf/matrix.hpp"
#include "wrf/measure.hpp"
#include "wrf/synth.hpp"

namespace wrf {

// Two independent forests, one per treatment arm, plus the original row
// indices each arm was trained on. The covariates are kept in memory for
// out-of-bag queries; model files store only the forests and the groups.
struct HTEModel {
  Forest forest0;
  Forest forest1;
  std::vector<int> group0;
  std::vector<int> group1;
  Matrix x;
};

struct OOBLambdaResult {
  struct Entry {
    int row;
    double lambda;
  };
  std::vector<Entry> values;
  std::vector<int> skipped;  // rows with no out-of-bag tree in their own arm
};

namespace detail {

inline Dataset arm_dataset(const HTEDataset& data, const std::vector<int>& rows) {
  Dataset ds;
  ds.x = Matrix(rows.size(), data.x.cols);
  ds.y = Matrix(rows.size(), data.y_observed.cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::size_t r = static_cast<std::size_t>(rows[i]);
    for (std::size_t j = 0; j < data.x.cols; ++j) ds.x(i, j) = data.x(r, j);
    for (std::size_t k = 0; k < data.y_observed.cols; ++k)
      ds.y(i, k) = data.y_observed(r, k);
  }
  return ds;
}

}  // namespace detail

inline HTEModel fit_hte(const HTEDataset& data, const ForestParams& params0,
                        const ForestParams& params1, int threads = 1) {
  if (data.x.rows != data.y_observed.rows || data.x.rows != data.t.size())
    throw ValidationError("fit_hte: x, y_observed and t row counts differ");

  HTEModel model;
  for (std::size_t i = 0; i < data.t.size(); ++i) {
    if (data.t[i] != 0 && data.t[i] != 1)
      throw ValidationError("fit_hte: assignment entries must be 0 or 1");
    (data.t[i] ? model.group1 : model.group0).push_back(static_cast<int>(i));
  }
  if (model.group0.empty()) throw ValidationError("fit_hte: empty control arm");
  if (model.group1.empty()) throw ValidationError("fit_hte: empty treated arm");
  if (model.group0.size() < static_cast<std::size_t>(std::max(params0.nodesize, 2)))
    throw ValidationError("fit_hte: control arm has fewer rows than nodesize");
  if (model.group1.size() < static_cast<std::size_t>(std::max(params1.nodesize, 2)))
    throw ValidationError("fit_hte: treated arm has fewer rows than nodesize");

  model.forest0 = fit(detail::arm_dataset(data, model.group0), params0, threads);
  model.forest1 = fit(detail::arm_dataset(data, model.group1), params1, threads);
  model.x = data.x;
  return model;
}

inline const Forest& arm_forest(const HTEModel& model, int t) {
  if (t != 0 && t != 1) throw ValidationError("hte: arm must be 0 or 1");
  return t ? model.forest1 : model.forest0;
}

// The arm-t conditional distribution estimate at x.
inline DiscreteMeasure estimate_pi(const HTEModel& model, int t,
                                   std::span<const double> x) {
  return predict_measure(arm_forest(model, t), x);
}

// Difference of the two arms' conditional means.
inline double estimate_cate(const HTEModel& model, std::span<const double> x) {
  if (model.forest0.training_y.cols != 1 || model.forest1.training_y.cols != 1)
    throw ValidationError("estimate_cate: responses must be univariate");
  return predict_mean(model.forest1, x)[0] - predict_mean(model.forest0, x)[0];
}

// Wasserstein distance between the two arms' conditional estimates at x.
inline double lambda_p(const HTEModel& model, std::span<const double> x, double p) {
  if (model.forest0.training_y.cols != model.forest1.training_y.cols)
    throw ValidationError("lambda_p: arms have different response dimensions");
  const DiscreteMeasure pi0 = estimate_pi(model, 0, x);
  const DiscreteMeasure pi1 = estimate_pi(model, 1, x);
  if (pi0.dim() == 1) return wasserstein_1d(pi0, pi1, p);
  return wasserstein_exact(pi0, pi1, p).first;
}

// Out-of-bag effect profile: for each training row, the lambda_p value at its
// covariates computed from the trees whose subsample excludes the row in its
// own arm (the other arm never saw the row, so all of its trees qualify).
// Rows whose arm retains no excluding tree are skipped and reported.
inline OOBLambdaResult oob_lambda(const HTEModel& model, double p) {
  if (!(p >= 1.0)) throw ValidationError("oob_lambda: order p must be >= 1");
  const std::size_t n = model.x.rows;
  if (n == 0) throw ValidationError("oob_lambda: model carries no covariates");

  // arm_of[i] in {0,1}, local_pos[i] = the row's index inside its arm.
  std::vector<int> arm_of(n, -1), local_pos(n, -1);
  for (std::size_t k = 0; k < model.group0.size(); ++k) {
    arm_of[static_cast<std::size_t>(model.group0[k])] = 0;
    local_pos[static_cast<std::size_t>(model.group0[k])] = static_cast<int>(k);
  }
  for (std::size_t k = 0; k < model.group1.size(); ++k) {
    arm_of[static_cast<std::size_t>(model.group1[k])] = 1;
    local_pos[static_cast<std::size_t>(model.group1[k])] = static_cast<int>(k);
  }
  for (int a : arm_of)
    if (a < 0) throw ValidationError("oob_lambda: groups do not cover all rows");

  const auto membership = [](const Forest& forest) {
    std::vector<std::vector<char>> in(forest.trees.size());
    for (std::size_t j = 0; j < forest.trees.size(); ++j) {
      in[j].assign(forest.training_y.rows, 0);
      for (int r : forest.trees[j].subsample) in[j][static_cast<std::size_t>(r)] = 1;
    }
    return in;
  };
  const auto in0 = membership(model.forest0);
  const auto in1 = membership(model.forest1);

  std::vector<int> all0(model.forest0.trees.size()), all1(model.forest1.trees.size());
  for (std::size_t j = 0; j < all0.size(); ++j) all0[j] = static_cast<int>(j);
  for (std::size_t j = 0; j < all1.size(); ++j) all1[j] = static_cast<int>(j);

  OOBLambdaResult out;
  std::vector<int> own_ids;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& own_in = arm_of[i] ? in1 : in0;
    own_ids.clear();
    for (std::size_t j = 0; j < own_in.size(); ++j)
      if (!own_in[j][static_cast<std::size_t>(local_pos[i])])
        own_ids.push_back(static_cast<int>(j));
    if (own_ids.empty()) {
      out.skipped.push_back(static_cast<int>(i));
      continue;
    }

    const auto xi = model.x.row(i);
    const DiscreteMeasure pi0 = measure_from_weights(
        model.forest0, weights_over(model.forest0, xi, arm_of[i] ? all0 : own_ids));
    const DiscreteMeasure pi1 = measure_from_weights(
        model.forest1, weights_over(model.forest1, xi, arm_of[i] ? own_ids : all1));
    const double lambda = pi0.dim() == 1 ? wasserstein_1d(pi0, pi1, p)
                                         : wasserstein_exact(pi0, pi1, p).first;
    out.values.push_back({static_cast<int>(i), lambda});
  }
  return out;
}

}  // namespace wrf
