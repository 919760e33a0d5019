#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wrf/forest.hpp"
#include "wrf/hte.hpp"
#include "wrf/matrix.hpp"
#include "wrf/measure.hpp"
#include "wrf/rng.hpp"
#include "wrf/synth.hpp"

namespace wrf {

// Extremely randomized baseline: per eligible node and tried dimension (in
// ascending order) one threshold is drawn uniformly on the cell's extent,
// and the draws compete on the same intra-class score the forest uses.
// Dimensions without extent consume no draw.
inline Tree build_ert_tree(const Dataset& ds, ForestParams params, Rng& rng,
                           const Matrix* split_y = nullptr) {
  params.criterion = SplitRule::intra_l2;
  detail::validate_params(ds, params);
  const Matrix& y_for_split = split_y ? *split_y : ds.y;
  const int d = static_cast<int>(ds.dim_x());

  return detail::grow_tree(ds, params, rng, [&](const std::vector<int>& rows, Rng& r) {
    std::vector<int> dims = r.sample_without_replacement(d, params.mtry);
    std::sort(dims.begin(), dims.end());

    SplitChoice best;
    for (int dim : dims) {
      double lo = ds.x(static_cast<std::size_t>(rows[0]), static_cast<std::size_t>(dim));
      double hi = lo;
      for (int row : rows) {
        const double v =
            ds.x(static_cast<std::size_t>(row), static_cast<std::size_t>(dim));
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      if (!(lo < hi)) continue;
      double thr = r.uniform(lo, hi);
      if (!(thr < hi)) thr = lo;
      const double gain = detail::intra_gain_rows(ds.x, y_for_split, rows, dim, thr);
      if (gain > best.gain) {
        best.gain = gain;
        best.dim = dim;
        best.threshold = thr;
      }
    }
    return best.dim < 0 ? std::nullopt : std::optional<SplitChoice>(best);
  });
}

inline Forest fit_ert(const Dataset& ds, ForestParams params, int threads = 1) {
  params.criterion = SplitRule::intra_l2;
  detail::validate_params(ds, params);
  Forest forest;
  forest.params = params;
  forest.method = "ert";
  forest.dim_x = static_cast<int>(ds.dim_x());
  forest.training_y = ds.y;

  Matrix storage;
  const Matrix* split_y = detail::standardized_split_y(ds, params, forest, storage);
  detail::build_forest_trees(forest, threads, [&](Rng& rng) {
    return build_ert_tree(ds, params, rng, split_y);
  });
  return forest;
}

// Simplified Mondrian baseline: the split dimension is drawn with probability
// proportional to the cell's side length, the position uniformly inside that
// side, and the responses are never consulted. Stopping rules match the
// forest's.
inline Tree build_mondrian_tree(const Dataset& ds, ForestParams params, Rng& rng) {
  params.criterion = SplitRule::intra_l2;
  detail::validate_params(ds, params);
  const std::size_t d = ds.dim_x();

  std::vector<double> lo(d), hi(d);
  return detail::grow_tree(ds, params, rng, [&](const std::vector<int>& rows, Rng& r) {
    for (std::size_t k = 0; k < d; ++k) {
      lo[k] = ds.x(static_cast<std::size_t>(rows[0]), k);
      hi[k] = lo[k];
    }
    for (int row : rows)
      for (std::size_t k = 0; k < d; ++k) {
        const double v = ds.x(static_cast<std::size_t>(row), k);
        lo[k] = std::min(lo[k], v);
        hi[k] = std::max(hi[k], v);
      }
    double total = 0.0;
    for (std::size_t k = 0; k < d; ++k) total += hi[k] - lo[k];
    if (!(total > 0.0)) return std::optional<SplitChoice>();

    const double u = r.uniform() * total;
    std::size_t dim = d - 1;
    double cum = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      cum += hi[k] - lo[k];
      if (u < cum) {
        dim = k;
        break;
      }
    }
    while (!(lo[dim] < hi[dim])) --dim;  // guard against rounding at the top end

    double thr = r.uniform(lo[dim], hi[dim]);
    if (!(thr < hi[dim])) thr = lo[dim];
    return std::optional<SplitChoice>(SplitChoice{static_cast<int>(dim), thr, 0.0});
  });
}

inline Forest fit_mondrian(const Dataset& ds, ForestParams params, int threads = 1) {
  params.criterion = SplitRule::intra_l2;
  detail::validate_params(ds, params);
  Forest forest;
  forest.params = params;
  forest.method = "mf";
  forest.dim_x = static_cast<int>(ds.dim_x());
  forest.training_y = ds.y;

  Matrix storage;
  detail::standardized_split_y(ds, params, forest, storage);
  detail::build_forest_trees(forest, threads, [&](Rng& rng) {
    return build_mondrian_tree(ds, params, rng);
  });
  return forest;
}

// Method tokens accepted by the harness and the CLI: intra, inter1, inter2,
// inter@<p>, ert, mf.
inline Forest fit_method(const std::string& method, const Dataset& ds,
                         ForestParams params, int threads = 1) {
  if (method == "intra") {
    params.criterion = SplitRule::intra_l2;
  } else if (method == "inter1") {
    params.criterion = SplitRule::inter_wp;
    params.p = 1.0;
  } else if (method == "inter2") {
    params.criterion = SplitRule::inter_wp;
    params.p = 2.0;
  } else if (method.rfind("inter@", 0) == 0) {
    params.criterion = SplitRule::inter_wp;
    try {
      params.p = std::stod(method.substr(6));
    } catch (const std::exception&) {
      throw ValidationError("method: cannot parse order in '" + method + "'");
    }
  } else if (method == "ert") {
    Forest forest = fit_ert(ds, params, threads);
    return forest;
  } else if (method == "mf") {
    return fit_mondrian(ds, params, threads);
  } else {
    throw ValidationError("method: unknown token '" + method + "'");
  }
  Forest forest = fit(ds, params, threads);
  forest.method = method;
  return forest;
}

// A fitted conditional-distribution estimator as the harness sees it: a name
// plus measure- and mean-valued queries. Forests plug in via the factory;
// tests may supply arbitrary closures.
struct Estimator {
  std::string name;
  std::function<DiscreteMeasure(std::span<const double>)> predict;
  std::function<std::vector<double>(std::span<const double>)> mean;
};

inline Estimator make_forest_estimator(std::string name, std::shared_ptr<const Forest> f) {
  Estimator est;
  est.name = std::move(name);
  est.predict = [f](std::span<const double> x) { return predict_measure(*f, x); };
  est.mean = [f](std::span<const double> x) { return predict_mean(*f, x); };
  return est;
}

struct MetricValue {
  double mean = 0.0;
  double stderr_ = 0.0;
};

// Fresh evaluation draw shared across methods and sweep values: test point i
// consumes substream(eval_seed, i), covariates first, then the reference
// sample. Bivariate references are capped at 300 atoms to keep the exact
// transport solve tractable.
struct EvalSet {
  std::vector<std::vector<double>> xs;
  std::vector<DiscreteMeasure> refs;
  int m_ref = 0;
};

inline EvalSet make_eval_set(const ScenarioSpec& spec, int t, int n_test, int m_ref,
                             std::uint64_t eval_seed) {
  if (n_test < 1) throw ValidationError("eval: n_test must be >= 1");
  if (m_ref < 1) throw ValidationError("eval: m_ref must be >= 1");
  validate_spec(spec);
  const int ref_size = response_dim(spec.kind) == 2 ? std::min(m_ref, 300) : m_ref;

  EvalSet set;
  set.m_ref = ref_size;
  set.xs.resize(static_cast<std::size_t>(n_test));
  set.refs.reserve(static_cast<std::size_t>(n_test));
  for (int i = 0; i < n_test; ++i) {
    Rng rng = Rng::substream(eval_seed, static_cast<std::uint64_t>(i));
    auto& x = set.xs[static_cast<std::size_t>(i)];
    x.resize(static_cast<std::size_t>(spec.d));
    for (double& v : x) v = rng.uniform();
    set.refs.push_back(sample_true_conditional(spec, t, x, ref_size, rng));
  }
  return set;
}

namespace detail {

inline MetricValue summarize(const std::vector<double>& values) {
  MetricValue out;
  const double n = static_cast<double>(values.size());
  for (double v : values) out.mean += v;
  out.mean /= n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.stderr_ = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return out;
}

inline double measure_distance(const DiscreteMeasure& estimated,
                               const DiscreteMeasure& ref, double p) {
  if (estimated.dim() == 1) return wasserstein_1d(estimated, ref, p);
  return wasserstein_exact(estimated, ref, p).first;
}

}  // namespace detail

// Mean and standard error of W_p between the estimator's measure and the
// reference measure over the evaluation set.
inline MetricValue avg_wasserstein_on(const EvalSet& set, const Estimator& estimator,
                                      double p) {
  std::vector<double> values;
  values.reserve(set.xs.size());
  for (std::size_t i = 0; i < set.xs.size(); ++i) {
    const DiscreteMeasure estimated = estimator.predict(set.xs[i]);
    if (estimated.dim() != set.refs[i].dim())
      throw ValidationError("eval: estimator measure dimension does not match scenario");
    values.push_back(detail::measure_distance(estimated, set.refs[i], p));
  }
  return detail::summarize(values);
}

inline MetricValue avg_wasserstein(const Estimator& estimator, const ScenarioSpec& spec,
                                   int t, double p, int n_test, int m_ref,
                                   std::uint64_t eval_seed) {
  return avg_wasserstein_on(make_eval_set(spec, t, n_test, m_ref, eval_seed), estimator,
                            p);
}

// Mean squared distance between the estimator's conditional mean and the
// scenario's true conditional mean over fresh test points. The points match
// the ones avg_wasserstein draws for the same eval_seed.
inline MetricValue mse_conditional_mean(const Estimator& estimator,
                                        const ScenarioSpec& spec, int t, int n_test,
                                        std::uint64_t eval_seed) {
  if (n_test < 1) throw ValidationError("eval: n_test must be >= 1");
  validate_spec(spec);
  std::vector<double> values;
  values.reserve(static_cast<std::size_t>(n_test));
  std::vector<double> x(static_cast<std::size_t>(spec.d));
  for (int i = 0; i < n_test; ++i) {
    Rng rng = Rng::substream(eval_seed, static_cast<std::uint64_t>(i));
    for (double& v : x) v = rng.uniform();
    const std::vector<double> predicted = estimator.mean(x);
    const std::vector<double> truth = true_conditional_mean(spec, t, x);
    if (predicted.size() != truth.size())
      throw ValidationError("eval: estimator mean dimension does not match scenario");
    double sq = 0.0;
    for (std::size_t k = 0; k < truth.size(); ++k)
      sq += (predicted[k] - truth[k]) * (predicted[k] - truth[k]);
    values.push_back(sq);
  }
  return detail::summarize(values);
}

struct MethodSpec {
  std::string method;
  ForestParams params;
};

struct MetricRequest {
  int t = 0;
  double p = 1.0;
};

struct BenchConfig {
  std::vector<MetricRequest> metrics;
  int n_test = 200;
  int m_ref = 2000;
  std::uint64_t eval_seed = 0;
  int threads = 1;
  bool include_mse = false;  // adds one conditional-mean MSE cell per (method, arm)
};

struct BenchCell {
  std::string method;
  int t = 0;
  double p = 1.0;
  std::string metric = "w";  // "w" or "mse"
  double mean = 0.0;
  double stderr_ = 0.0;
  int n_test = 0;
  int m_ref = 0;
  double runtime_s = 0.0;
  std::string error;  // empty on success
};

struct SweepRow {
  std::string axis;
  int value = 0;
  BenchCell cell;
};

struct BenchReport {
  std::string scenario;
  std::uint64_t train_seed = 0;
  std::vector<BenchCell> cells;
  std::vector<SweepRow> sweeps;
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point start) {
  const auto elapsed = std::chrono::steady_clock::now() - start;
  return std::max(std::chrono::duration<double>(elapsed).count(), 1e-9);
}

// Fits one method on one arm and fills the requested cells; any exception is
// recorded on every cell of the group instead of aborting the run.
inline void bench_arm(const MethodSpec& method, const Dataset& arm_ds, int t,
                      const std::vector<double>& orders, const EvalSet& set,
                      const BenchConfig& cfg, const ScenarioSpec& spec,
                      std::vector<BenchCell>& out) {
  const auto made = [&](double p) {
    BenchCell cell;
    cell.method = method.method;
    cell.t = t;
    cell.p = p;
    cell.n_test = cfg.n_test;
    cell.m_ref = set.m_ref;
    return cell;
  };

  const auto start = std::chrono::steady_clock::now();
  Estimator estimator;
  try {
    estimator = make_forest_estimator(
        method.method, std::make_shared<Forest>(
                           fit_method(method.method, arm_ds, method.params, cfg.threads)));
  } catch (const std::exception& err) {
    for (double p : orders) {
      BenchCell cell = made(p);
      cell.error = err.what();
      cell.runtime_s = seconds_since(start);
      out.push_back(std::move(cell));
    }
    return;
  }
  const double fit_seconds = seconds_since(start);

  for (double p : orders) {
    BenchCell cell = made(p);
    const auto eval_start = std::chrono::steady_clock::now();
    try {
      const MetricValue value = avg_wasserstein_on(set, estimator, p);
      cell.mean = value.mean;
      cell.stderr_ = value.stderr_;
    } catch (const std::exception& err) {
      cell.error = err.what();
    }
    cell.runtime_s = fit_seconds + seconds_since(eval_start);
    out.push_back(std::move(cell));
  }
  if (cfg.include_mse) {
    BenchCell cell = made(0.0);
    cell.metric = "mse";
    cell.m_ref = 0;
    const auto eval_start = std::chrono::steady_clock::now();
    try {
      const MetricValue value =
          mse_conditional_mean(estimator, spec, t, cfg.n_test, cfg.eval_seed);
      cell.mean = value.mean;
      cell.stderr_ = value.stderr_;
    } catch (const std::exception& err) {
      cell.error = err.what();
    }
    cell.runtime_s = fit_seconds + seconds_since(eval_start);
    out.push_back(std::move(cell));
  }
}

}  // namespace detail

// Trains every method on the same observational draw and evaluates all
// requested (t, p) cells; per-method failures are recorded, not fatal.
inline BenchReport run_benchmark(const std::vector<MethodSpec>& methods,
                                 const ScenarioSpec& spec, const BenchConfig& cfg) {
  if (methods.empty()) throw ValidationError("benchmark: no methods given");
  if (cfg.metrics.empty()) throw ValidationError("benchmark: no metrics requested");
  for (const MetricRequest& m : cfg.metrics)
    if (m.t != 0 && m.t != 1)
      throw ValidationError("benchmark: metric arm must be 0 or 1");

  BenchReport report;
  report.scenario = to_string(spec.kind);
  report.train_seed = spec.seed;

  const HTEDataset data = generate(spec);
  std::vector<int> group0, group1;
  for (std::size_t i = 0; i < data.t.size(); ++i)
    (data.t[i] ? group1 : group0).push_back(static_cast<int>(i));

  for (const int t : {0, 1}) {
    std::vector<double> orders;
    for (const MetricRequest& m : cfg.metrics)
      if (m.t == t) orders.push_back(m.p);
    if (orders.empty() && !cfg.include_mse) continue;

    const auto& group = t ? group1 : group0;
    if (group.empty())
      throw ValidationError("benchmark: scenario draw left arm " + std::to_string(t) +
                            " empty");
    const Dataset arm_ds = detail::arm_dataset(data, group);
    const EvalSet set = make_eval_set(spec, t, cfg.n_test, cfg.m_ref, cfg.eval_seed);
    for (const MethodSpec& method : methods)
      detail::bench_arm(method, arm_ds, t, orders, set, cfg, spec, report.cells);
  }
  return report;
}

enum class SweepAxis { mtry, nodesize, subsample_size };

inline std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::mtry: return "mtry";
    case SweepAxis::nodesize: return "nodesize";
    case SweepAxis::subsample_size: return "subsample_size";
  }
  throw InternalError("sweep: unknown axis");
}

inline SweepAxis sweep_axis_from_string(const std::string& name) {
  if (name == "mtry") return SweepAxis::mtry;
  if (name == "nodesize") return SweepAxis::nodesize;
  if (name == "subsample_size") return SweepAxis::subsample_size;
  throw ValidationError("sweep: unknown axis '" + name + "'");
}

// One full fit and evaluation per (value, method), sharing the evaluation
// points across values so the curves differ only through the parameter.
inline BenchReport param_sweep(SweepAxis axis, const std::vector<int>& values,
                               const std::vector<MethodSpec>& methods,
                               const ScenarioSpec& spec, const BenchConfig& cfg) {
  if (values.empty()) throw ValidationError("sweep: no values given");
  if (methods.empty()) throw ValidationError("sweep: no methods given");
  if (cfg.metrics.empty()) throw ValidationError("sweep: no metrics requested");
  const int min_value = axis == SweepAxis::mtry ? 1 : 2;
  for (int v : values)
    if (v < min_value)
      throw ValidationError("sweep: value " + std::to_string(v) + " is invalid for axis " +
                            to_string(axis));

  BenchReport report;
  report.scenario = to_string(spec.kind);
  report.train_seed = spec.seed;

  const HTEDataset data = generate(spec);
  std::vector<int> group0, group1;
  for (std::size_t i = 0; i < data.t.size(); ++i)
    (data.t[i] ? group1 : group0).push_back(static_cast<int>(i));

  for (const int t : {0, 1}) {
    std::vector<double> orders;
    for (const MetricRequest& m : cfg.metrics)
      if (m.t == t) orders.push_back(m.p);
    if (orders.empty() && !cfg.include_mse) continue;

    const auto& group = t ? group1 : group0;
    if (group.empty())
      throw ValidationError("sweep: scenario draw left arm " + std::to_string(t) +
                            " empty");
    const Dataset arm_ds = detail::arm_dataset(data, group);
    const EvalSet set = make_eval_set(spec, t, cfg.n_test, cfg.m_ref, cfg.eval_seed);

    for (const int value : values) {
      for (const MethodSpec& method : methods) {
        MethodSpec tuned = method;
        switch (axis) {
          case SweepAxis::mtry: tuned.params.mtry = value; break;
          case SweepAxis::nodesize: tuned.params.nodesize = value; break;
          case SweepAxis::subsample_size: tuned.params.subsample_size = value; break;
        }
        std::vector<BenchCell> cells;
        detail::bench_arm(tuned, arm_ds, t, orders, set, cfg, spec, cells);
        for (BenchCell& cell : cells)
          report.sweeps.push_back(SweepRow{to_string(axis), value, std::move(cell)});
      }
    }
  }
  return report;
}

}  // namespace wrf
