#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace wrf {

// Thrown on invalid user-supplied data (bad measures, malformed datasets,
// out-of-range parameters). The CLI maps it to exit code 2.
class ValidationError : public std::runtime_error {
public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when an internal invariant breaks (e.g. transport solver failing on
// a feasible balanced problem). The CLI maps it to exit code 3.
class InternalError : public std::runtime_error {
public:
  explicit InternalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<const double> row(std::size_t r) const {
    return {data.data() + r * cols, cols};
  }
  std::span<double> row(std::size_t r) {
    return {data.data() + r * cols, cols};
  }

  bool empty() const { return rows == 0 || cols == 0; }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows == b.rows && a.cols == b.cols && a.data == b.data;
  }
};

// Supervised training data: covariates x (n x d) and responses y (n x d').
struct Dataset {
  Matrix x;
  Matrix y;

  std::size_t n() const { return x.rows; }
  std::size_t dim_x() const { return x.cols; }
  std::size_t dim_y() const { return y.cols; }
};

inline void validate_dataset(const Dataset& ds) {
  if (ds.x.rows != ds.y.rows)
    throw ValidationError("dataset: x and y row counts differ (" +
                          std::to_string(ds.x.rows) + " vs " + std::to_string(ds.y.rows) + ")");
  if (ds.x.rows < 2) throw ValidationError("dataset: need at least 2 rows");
  if (ds.x.cols < 1 || ds.y.cols < 1)
    throw ValidationError("dataset: zero-dimensional x or y");
  for (double v : ds.x.data)
    if (!std::isfinite(v)) throw ValidationError("dataset: non-finite covariate entry");
  for (double v : ds.y.data)
    if (!std::isfinite(v)) throw ValidationError("dataset: non-finite response entry");
}

}  // namespace wrf
