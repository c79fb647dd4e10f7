#pragma once

// Nuisance estimators: treatment kernel p(A=1|z,w), outcome regression
// E[Y|z,w], and the instrument density h(z|w). Tabular fits saturate on
// discrete covariates (so they are consistent, which is what makes the
// targeted estimator doubly robust even under a misspecified outcome
// regression); HAL fits cover non-saturated designs.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ivpol/common.hpp"
#include "ivpol/hal.hpp"
#include "ivpol/npsem.hpp"

namespace ivpol {

namespace detail {

inline std::vector<double> distinct_sorted(const std::vector<double>& v) {
  std::vector<double> out = v;
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline std::size_t z_index_of(const std::vector<double>& z_support, double z) {
  for (std::size_t k = 0; k < z_support.size(); ++k)
    if (z_support[k] == z) return k;
  throw ValidationError("instrument value " + std::to_string(z) + " not in support");
}

// Design row [z, w...] for HAL fits that treat the instrument as a covariate.
inline Matrix zw_design(const ObservedDataset& data) {
  Matrix x(data.n(), 1 + data.d());
  for (std::size_t i = 0; i < data.n(); ++i) {
    x(i, 0) = data.z[i];
    for (std::size_t k = 0; k < data.d(); ++k) x(i, 1 + k) = data.w(i, k);
  }
  return x;
}

inline HalFit fit_hal(const Matrix& x, const std::vector<double>& y, const std::vector<double>& w,
                      Link link, const HalConfig& cfg) {
  const std::size_t deg = std::min<std::size_t>(std::max<std::size_t>(cfg.max_degree, 1), x.cols);
  const HalBasis basis = build_basis(x, deg, cfg.max_knots_per_dim);
  const Design des = build_design(basis, x);
  double lambda = cfg.fixed_lambda;
  if (lambda < 0.0) {
    std::vector<double> grid = cfg.lambda_grid;
    if (grid.empty()) grid = default_lambda_grid(des, y, w);
    lambda = cross_validate_lambda(des, y, w, link, grid, cfg.n_folds, nullptr, cfg.fit).lambda;
  }
  return fit_weighted_l1(basis, des, y, w, link, lambda, cfg.fit);
}

}  // namespace detail

enum class KernelKind { tabular, hal };

// p(A=1 | z, w) for a binary treatment.
struct ConditionalKernel {
  KernelKind kind = KernelKind::tabular;
  std::vector<double> z_support;
  std::vector<std::size_t> covariate_subset;          // tabular: dims defining strata
  StratumTable<std::vector<double>> p1;               // tabular: per stratum, per z index
  std::optional<HalFit> fit;                          // hal: logit fit on [z, w...]

  double prob_a1(std::size_t z_index, const std::vector<double>& w_full) const {
    if (z_index >= z_support.size()) throw ValidationError("ConditionalKernel: z index out of range");
    if (kind == KernelKind::tabular) {
      const StratumKey key = project_key(w_full, covariate_subset);
      auto it = p1.find(key);
      if (it == p1.end())
        throw ValidationError("ConditionalKernel: no fit for stratum " + key_to_string(key));
      return it->second[z_index];
    }
    std::vector<double> x;
    x.reserve(1 + w_full.size());
    x.push_back(z_support[z_index]);
    x.insert(x.end(), w_full.begin(), w_full.end());
    return fit->predict(x);
  }

  // Strata the kernel enumerates (tabular only).
  std::vector<StratumKey> strata() const {
    if (kind != KernelKind::tabular)
      throw ValidationError("ConditionalKernel: stratum enumeration needs a tabular kernel");
    std::vector<StratumKey> keys;
    keys.reserve(p1.size());
    for (const auto& [key, row] : p1) keys.push_back(key);
    return keys;
  }
};

// Tabular: empirical share of A=1 per (stratum, z) cell. Every observed
// stratum must contain every instrument level; an empty cell is a positivity
// diagnostic and errors with its coordinates.
inline ConditionalKernel fit_treatment_kernel(const ObservedDataset& data, KernelKind kind,
                                              const std::vector<std::size_t>& covariate_subset = {},
                                              const HalConfig& cfg = {}) {
  data.validate();
  if (data.n() == 0) throw ValidationError("fit_treatment_kernel: empty dataset");
  for (double a : data.a)
    if (a != 0.0 && a != 1.0) throw ValidationError("fit_treatment_kernel: treatment must be binary 0/1");

  ConditionalKernel k;
  k.kind = kind;
  k.z_support = detail::distinct_sorted(data.z);
  if (kind == KernelKind::hal) {
    const Matrix x = detail::zw_design(data);
    std::vector<double> w(data.n(), 1.0);
    k.fit = detail::fit_hal(x, data.a, w, Link::logit, cfg);
    return k;
  }
  k.covariate_subset = covariate_subset.empty() ? all_dims(data.d()) : covariate_subset;
  StratumTable<std::vector<double>> counts, ones;
  for (std::size_t i = 0; i < data.n(); ++i) {
    const StratumKey key = project_key(data.w.row(i), data.d(), k.covariate_subset);
    auto& c = counts.try_emplace(key, std::vector<double>(k.z_support.size(), 0.0)).first->second;
    auto& o = ones.try_emplace(key, std::vector<double>(k.z_support.size(), 0.0)).first->second;
    const std::size_t zi = detail::z_index_of(k.z_support, data.z[i]);
    c[zi] += 1.0;
    o[zi] += data.a[i];
  }
  for (auto& [key, c] : counts) {
    std::vector<double> row(k.z_support.size());
    for (std::size_t zi = 0; zi < k.z_support.size(); ++zi) {
      if (c[zi] == 0.0)
        throw PositivityError("fit_treatment_kernel: empty cell at z=" + std::to_string(k.z_support[zi]) +
                              ", w=" + key_to_string(key));
      row[zi] = ones[key][zi] / c[zi];
    }
    k.p1[key] = std::move(row);
  }
  return k;
}

enum class QKind { ols_main_effects, saturated, hal };

// E[Y | z, w] with the observed outcome range recorded for bounding.
struct OutcomeRegression {
  QKind kind = QKind::ols_main_effects;
  std::vector<double> z_support;
  std::vector<double> ols_coef;                        // [intercept, z, w...]
  std::map<std::pair<std::size_t, StratumKey>, double> cell_means;  // saturated
  std::optional<HalFit> fit;                           // hal
  double y_min = 0.0, y_max = 0.0;

  double predict(std::size_t z_index, const std::vector<double>& w_full) const {
    if (z_index >= z_support.size()) throw ValidationError("OutcomeRegression: z index out of range");
    switch (kind) {
      case QKind::ols_main_effects: {
        double v = ols_coef[0] + ols_coef[1] * z_support[z_index];
        for (std::size_t k = 0; k < w_full.size(); ++k) v += ols_coef[2 + k] * w_full[k];
        return v;
      }
      case QKind::saturated: {
        auto it = cell_means.find({z_index, w_full});
        if (it == cell_means.end())
          throw ValidationError("OutcomeRegression: no cell mean for z=" + std::to_string(z_support[z_index]) +
                                ", w=" + key_to_string(w_full));
        return it->second;
      }
      case QKind::hal: {
        std::vector<double> x;
        x.reserve(1 + w_full.size());
        x.push_back(z_support[z_index]);
        x.insert(x.end(), w_full.begin(), w_full.end());
        return fit->predict(x);
      }
    }
    throw ValidationError("OutcomeRegression: unknown kind");
  }
};

inline OutcomeRegression fit_outcome_regression(const ObservedDataset& data, QKind kind,
                                                const HalConfig& cfg = {}) {
  data.validate();
  if (data.n() == 0) throw ValidationError("fit_outcome_regression: empty dataset");
  OutcomeRegression q;
  q.kind = kind;
  q.z_support = detail::distinct_sorted(data.z);
  q.y_min = *std::min_element(data.y.begin(), data.y.end());
  q.y_max = *std::max_element(data.y.begin(), data.y.end());

  if (kind == QKind::ols_main_effects) {
    const std::size_t p = 2 + data.d();
    Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd xty = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd row(p);
    for (std::size_t i = 0; i < data.n(); ++i) {
      row(0) = 1.0;
      row(1) = data.z[i];
      for (std::size_t k = 0; k < data.d(); ++k) row(2 + k) = data.w(i, k);
      xtx.noalias() += row * row.transpose();
      xty.noalias() += row * data.y[i];
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(xtx);
    lu.setThreshold(1e-10);
    if (lu.rank() < static_cast<Eigen::Index>(p))
      throw ValidationError("fit_outcome_regression: collinear design (rank-deficient normal equations)");
    const Eigen::VectorXd b = lu.solve(xty);
    q.ols_coef.assign(b.data(), b.data() + p);
    return q;
  }
  if (kind == QKind::saturated) {
    std::map<std::pair<std::size_t, StratumKey>, std::pair<double, double>> acc;  // (sum, count)
    for (std::size_t i = 0; i < data.n(); ++i) {
      const std::size_t zi = detail::z_index_of(q.z_support, data.z[i]);
      auto& cell = acc[{zi, data.w_row(i)}];
      cell.first += data.y[i];
      cell.second += 1.0;
    }
    for (const auto& [key, cell] : acc) q.cell_means[key] = cell.first / cell.second;
    return q;
  }
  const Matrix x = detail::zw_design(data);
  std::vector<double> w(data.n(), 1.0);
  q.fit = detail::fit_hal(x, data.y, w, Link::identity, cfg);
  return q;
}

// Tabular instrument density h(z|w): empirical pmf per covariate stratum.
struct InstrumentDensity {
  std::vector<double> z_support;
  std::vector<std::size_t> covariate_subset;
  StratumTable<std::vector<double>> pmf;
  StratumTable<std::vector<double>> counts;

  double prob(std::size_t z_index, const std::vector<double>& w_full) const {
    if (z_index >= z_support.size()) throw ValidationError("InstrumentDensity: z index out of range");
    const StratumKey key = project_key(w_full, covariate_subset);
    auto it = pmf.find(key);
    if (it == pmf.end())
      throw ValidationError("InstrumentDensity: no fit for stratum " + key_to_string(key));
    return it->second[z_index];
  }
};

inline InstrumentDensity fit_instrument_density(const ObservedDataset& data,
                                                const std::vector<std::size_t>& covariate_subset = {}) {
  data.validate();
  if (data.n() == 0) throw ValidationError("fit_instrument_density: empty dataset");
  InstrumentDensity h;
  h.z_support = detail::distinct_sorted(data.z);
  h.covariate_subset = covariate_subset.empty() ? all_dims(data.d()) : covariate_subset;
  for (std::size_t i = 0; i < data.n(); ++i) {
    const StratumKey key = project_key(data.w.row(i), data.d(), h.covariate_subset);
    auto& c = h.counts.try_emplace(key, std::vector<double>(h.z_support.size(), 0.0)).first->second;
    c[detail::z_index_of(h.z_support, data.z[i])] += 1.0;
  }
  for (const auto& [key, c] : h.counts) {
    double tot = 0.0;
    for (double v : c) tot += v;
    std::vector<double> row(c.size());
    for (std::size_t zi = 0; zi < c.size(); ++zi) row[zi] = c[zi] / tot;
    h.pmf[key] = std::move(row);
  }
  return h;
}

}  // namespace ivpol
