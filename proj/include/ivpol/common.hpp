#pragma once

// Shared primitives: error taxonomy, stable link functions, a flat row-major
// matrix, and stratum-keyed tables used across the library.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ivpol {

inline constexpr const char* kVersion = "0.1.0";

// Exit-code taxonomy: validation/parse -> 2, non-convergence -> 3, positivity -> 4.
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};
struct ParseError : ValidationError {
  explicit ParseError(const std::string& msg) : ValidationError(msg) {}
};
struct ConvergenceError : std::runtime_error {
  explicit ConvergenceError(const std::string& msg) : std::runtime_error(msg) {}
};
struct PositivityError : std::runtime_error {
  explicit PositivityError(const std::string& msg) : std::runtime_error(msg) {}
};

inline double expit(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double logit(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ValidationError("logit: argument must lie in (0,1)");
  return std::log(p) - std::log1p(-p);
}

// log(1 + e^x) without overflow.
inline double softplus(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

inline double clamp01(double p, double eps) {
  if (p < eps) return eps;
  if (p > 1.0 - eps) return 1.0 - eps;
  return p;
}

// Row-major dense matrix; rows are observations.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  const double* row(std::size_t i) const { return data.data() + i * cols; }

  static Matrix from_rows(const std::vector<std::vector<double>>& rows_in) {
    Matrix m;
    m.rows = rows_in.size();
    m.cols = rows_in.empty() ? 0 : rows_in.front().size();
    m.data.reserve(m.rows * m.cols);
    for (const auto& r : rows_in) {
      if (r.size() != m.cols) throw ValidationError("Matrix::from_rows: ragged rows");
      m.data.insert(m.data.end(), r.begin(), r.end());
    }
    return m;
  }
};

// A stratum key is the covariate vector restricted to a subset of dimensions.
// Keys compare exactly; covariates are integer-coded in all tabular paths.
using StratumKey = std::vector<double>;

template <typename T>
using StratumTable = std::map<StratumKey, T>;

inline StratumKey project_key(const std::vector<double>& w, const std::vector<std::size_t>& subset) {
  StratumKey k;
  k.reserve(subset.size());
  for (std::size_t s : subset) {
    if (s >= w.size()) throw ValidationError("project_key: covariate index out of range");
    k.push_back(w[s]);
  }
  return k;
}

inline StratumKey project_key(const double* w, std::size_t d, const std::vector<std::size_t>& subset) {
  StratumKey k;
  k.reserve(subset.size());
  for (std::size_t s : subset) {
    if (s >= d) throw ValidationError("project_key: covariate index out of range");
    k.push_back(w[s]);
  }
  return k;
}

// Re-keys stratum values given in full-space dims value_dims onto want_dims.
// Every wanted dim must be present among value_dims.
inline StratumKey translate_key(const StratumKey& values, const std::vector<std::size_t>& value_dims,
                                const std::vector<std::size_t>& want_dims) {
  if (values.size() != value_dims.size()) throw ValidationError("translate_key: arity mismatch");
  StratumKey out;
  out.reserve(want_dims.size());
  for (std::size_t wd : want_dims) {
    bool found = false;
    for (std::size_t k = 0; k < value_dims.size(); ++k) {
      if (value_dims[k] == wd) {
        out.push_back(values[k]);
        found = true;
        break;
      }
    }
    if (!found)
      throw ValidationError("translate_key: covariate dim " + std::to_string(wd) +
                            " not available in the provided stratum");
  }
  return out;
}

inline bool subset_of(const std::vector<std::size_t>& small, const std::vector<std::size_t>& big) {
  for (std::size_t s : small) {
    bool found = false;
    for (std::size_t b : big)
      if (b == s) { found = true; break; }
    if (!found) return false;
  }
  return true;
}

inline std::string key_to_string(const StratumKey& k) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < k.size(); ++i) {
    if (i) os << ",";
    os << k[i];
  }
  os << ")";
  return os.str();
}

inline void require_finite(double x, const char* what) {
  if (!std::isfinite(x)) throw ValidationError(std::string(what) + ": non-finite value");
}

template <typename It>
void require_all_finite(It begin, It end, const char* what) {
  for (It it = begin; it != end; ++it) require_finite(*it, what);
}

// Identity subset {0,...,d-1}.
inline std::vector<std::size_t> all_dims(std::size_t d) {
  std::vector<std::size_t> s(d);
  for (std::size_t i = 0; i < d; ++i) s[i] = i;
  return s;
}

}  // namespace ivpol
