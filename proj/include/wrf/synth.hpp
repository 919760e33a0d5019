#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "wrf/matrix.hpp"
#include "wrf/measure.hpp"
#include "wrf/rng.hpp"

namespace wrf {

enum class Scenario { main, multivariate_cost, appendix_a, appendix_c };

struct ScenarioSpec {
  Scenario kind = Scenario::main;
  int n = 0;
  int d = 50;
  std::uint64_t seed = 0;
};

// One observational draw plus the potential outcomes the generator saw. Only
// (x, y_observed, t) is observational data; y0 and y1 stay in-process for
// oracle evaluation and are never exported.
struct HTEDataset {
  Matrix x;
  Matrix y_observed;
  std::vector<int> t;
  Matrix y0;
  Matrix y1;
};

struct MeanVar {
  double m0;
  double s0sq;
  double m1;
  double s1sq;
};

inline std::string to_string(Scenario kind) {
  switch (kind) {
    case Scenario::main: return "main";
    case Scenario::multivariate_cost: return "multivariate_cost";
    case Scenario::appendix_a: return "appendix_a";
    case Scenario::appendix_c: return "appendix_c";
  }
  throw InternalError("scenario: unknown kind");
}

inline Scenario scenario_from_string(const std::string& name) {
  if (name == "main") return Scenario::main;
  if (name == "multivariate_cost") return Scenario::multivariate_cost;
  if (name == "appendix_a") return Scenario::appendix_a;
  if (name == "appendix_c") return Scenario::appendix_c;
  throw ValidationError("scenario: unknown kind '" + name + "'");
}

inline std::size_t response_dim(Scenario kind) {
  return kind == Scenario::multivariate_cost ? 2u : 1u;
}

inline void validate_spec(const ScenarioSpec& spec) {
  if (spec.n < 2) throw ValidationError("scenario: n must be >= 2");
  if (spec.d < 6) throw ValidationError("scenario: d must be >= 6");
}

// Conditional means and variances of the two potential outcomes. Queries off
// the unit cube are tolerated; the variance floors keep them well defined.
inline MeanVar mean_var_functions(std::span<const double> x) {
  if (x.size() < 6)
    throw ValidationError("scenario oracle: need at least 6 covariates");
  const double m0 = 10.0 * x[1] * x[3] + x[2] + std::exp(x[3] - 2.0 * x[0]);
  const double s0sq = std::max(-x[0] * x[1] + 4.0 * x[2] * x[2], 0.2);
  const double m1 = 2.0 * m0 + 1.0 - 5.0 * x[1] * x[4];
  const double s1sq = std::max(3.0 * x[1] + x[2] * x[3] + x[5], 1e-12);
  return {m0, s0sq, m1, s1sq};
}

inline double true_cate(std::span<const double> x) {
  if (x.size() < 5)
    throw ValidationError("scenario oracle: need at least 5 covariates");
  return -2.5 * x[1] * x[4];
}

inline double propensity(const ScenarioSpec& spec, std::span<const double> x) {
  if (spec.kind != Scenario::appendix_a && spec.kind != Scenario::appendix_c)
    return 0.5;
  if (x.size() < 3)
    throw ValidationError("scenario oracle: need at least 3 covariates");
  return 0.5 * std::sin(2.0 * x[0] * x[1] + 6.0 * x[2]) + 0.5;
}

// A deterministic query point: the first three coordinates drive the
// propensity to exactly zero, the fifth zeroes the treatment effect, and the
// remaining coordinates sit at the cube center.
inline std::vector<double> zero_propensity_point(int d) {
  if (d < 6) throw ValidationError("scenario: d must be >= 6");
  std::vector<double> x(static_cast<std::size_t>(d), 0.5);
  x[0] = std::numbers::pi / 4.0;
  x[1] = 1.0;
  x[2] = std::numbers::pi / 6.0;
  x[4] = 0.0;
  return x;
}

namespace detail {

inline double draw_treated_response(Scenario kind, const MeanVar& mv, Rng& rng) {
  const bool smooth_atom =
      kind == Scenario::appendix_a || kind == Scenario::appendix_c;
  if (rng.uniform() < 0.5)
    return smooth_atom ? -1.0 + rng.normal() : -1.0;
  return mv.m1 + std::sqrt(mv.s1sq) * rng.normal();
}

inline double draw_treatment_cost(std::span<const double> x, Rng& rng) {
  const double mean = 2.0 * x[2] * x[4] + x[1];
  const double var = std::max(x[4] * x[5] + 1.0, 1e-12);
  return mean + std::sqrt(var) * rng.normal();
}

}  // namespace detail

// Draws the observational sample. Row i consumes only substream(seed, i), in
// a fixed order: d covariates, the assignment, Y(0), the Y(1) mixture, and
// for the cost scenario C(1). The control arm carries no treatment, so its
// cost coordinate is identically zero.
inline HTEDataset generate(const ScenarioSpec& spec) {
  validate_spec(spec);
  const std::size_t n = static_cast<std::size_t>(spec.n);
  const std::size_t d = static_cast<std::size_t>(spec.d);
  const std::size_t dp = response_dim(spec.kind);

  HTEDataset out;
  out.x = Matrix(n, d);
  out.y_observed = Matrix(n, dp);
  out.y0 = Matrix(n, dp);
  out.y1 = Matrix(n, dp);
  out.t.resize(n);

  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = Rng::substream(spec.seed, i);
    for (std::size_t j = 0; j < d; ++j) out.x(i, j) = rng.uniform();
    const auto xi = out.x.row(i);

    out.t[i] = rng.uniform() < propensity(spec, xi) ? 1 : 0;

    const MeanVar mv = mean_var_functions(xi);
    out.y0(i, 0) = mv.m0 + std::sqrt(mv.s0sq) * rng.normal();
    out.y1(i, 0) = detail::draw_treated_response(spec.kind, mv, rng);
    if (dp == 2) {
      out.y0(i, 1) = 0.0;
      out.y1(i, 1) = detail::draw_treatment_cost(xi, rng);
    }

    const Matrix& src = out.t[i] ? out.y1 : out.y0;
    for (std::size_t k = 0; k < dp; ++k) out.y_observed(i, k) = src(i, k);
  }
  return out;
}

// The true conditional mean vector of the arm-t response at x. The treated
// response is the half-half mixture, so its first coordinate averages the
// atom at -1 with m1.
inline std::vector<double> true_conditional_mean(const ScenarioSpec& spec, int t,
                                                 std::span<const double> x) {
  if (t != 0 && t != 1)
    throw ValidationError("true_conditional_mean: t must be 0 or 1");
  const MeanVar mv = mean_var_functions(x);
  std::vector<double> mean(response_dim(spec.kind), 0.0);
  mean[0] = t ? 0.5 * mv.m1 - 0.5 : mv.m0;
  if (mean.size() == 2 && t) mean[1] = 2.0 * x[2] * x[4] + x[1];
  return mean;
}

// Uniform empirical measure on m fresh draws from the true conditional law
// of Y(t) at x; the evaluation harness uses it as the reference measure.
inline DiscreteMeasure sample_true_conditional(const ScenarioSpec& spec, int t,
                                               std::span<const double> x, int m,
                                               Rng& rng) {
  if (t != 0 && t != 1)
    throw ValidationError("sample_true_conditional: t must be 0 or 1");
  if (m < 1) throw ValidationError("sample_true_conditional: m must be >= 1");
  const MeanVar mv = mean_var_functions(x);
  const std::size_t dp = response_dim(spec.kind);

  Matrix pts(static_cast<std::size_t>(m), dp);
  for (std::size_t i = 0; i < static_cast<std::size_t>(m); ++i) {
    if (t == 0) {
      pts(i, 0) = mv.m0 + std::sqrt(mv.s0sq) * rng.normal();
      if (dp == 2) pts(i, 1) = 0.0;
    } else {
      pts(i, 0) = detail::draw_treated_response(spec.kind, mv, rng);
      if (dp == 2) pts(i, 1) = detail::draw_treatment_cost(x, rng);
    }
  }
  return make_measure(pts);
}

}  // namespace wrf
