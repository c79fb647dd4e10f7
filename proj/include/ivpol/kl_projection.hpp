#pragma once

// KL projection of a treatment target onto the policy-implied marginal
// family. Pseudo-treatments A*_i ~ g* are drawn once; EM alternates a
// closed-form posterior E-step with a penalized weighted logistic M-step
// (duplication trick) over a HAL basis. The penalty level is selected once
// up front and held fixed, and every M-step warm-starts from the current
// coefficients with a per-update monotone solver, so the penalized
// observed-data log-likelihood ascends at every iteration up to
// floating-point slack.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <variant>
#include <vector>

#include "ivpol/common.hpp"
#include "ivpol/hal.hpp"
#include "ivpol/nuisance.hpp"
#include "ivpol/policy.hpp"
#include "ivpol/rng.hpp"

namespace ivpol {

// log p-hat(a | z, w) for a binary treatment kernel.
struct BinaryKernelDensity {
  ConditionalKernel kernel;

  double log_density(double a, std::size_t z_index, const std::vector<double>& w) const {
    if (a != 0.0 && a != 1.0) throw ValidationError("BinaryKernelDensity: treatment must be 0/1");
    const double p1 = kernel.prob_a1(z_index, w);
    const double p = (a == 1.0) ? p1 : 1.0 - p1;
    return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
  }
};

// log density of A | Z=z, W=w ~ N(gamma z + psi(w), sigma^2).
struct GaussianKernelDensity {
  double gamma = 0.0;
  double sigma = 1.0;
  std::function<double(const std::vector<double>&)> psi;  // mean shift from covariates

  double log_density(double a, std::size_t z_index, const std::vector<double>& w) const {
    const double mean = gamma * static_cast<double>(z_index) + (psi ? psi(w) : 0.0);
    const double t = (a - mean) / sigma;
    return -0.5 * t * t - std::log(sigma) - 0.9189385332046727418;
  }
};

class KernelDensity {
 public:
  explicit KernelDensity(BinaryKernelDensity b) : impl_(std::move(b)) {
    if (std::get<BinaryKernelDensity>(impl_).kernel.z_support.size() != 2)
      throw ValidationError("KernelDensity: needs a binary instrument");
  }
  explicit KernelDensity(GaussianKernelDensity g) : impl_(std::move(g)) {
    if (!(std::get<GaussianKernelDensity>(impl_).sigma > 0.0))
      throw ValidationError("KernelDensity: sigma must be positive");
  }

  double log_density(double a, std::size_t z_index, const std::vector<double>& w) const {
    if (const auto* b = std::get_if<BinaryKernelDensity>(&impl_)) return b->log_density(a, z_index, w);
    return std::get<GaussianKernelDensity>(impl_).log_density(a, z_index, w);
  }

  std::vector<double> z_support() const {
    if (const auto* b = std::get_if<BinaryKernelDensity>(&impl_)) return b->kernel.z_support;
    return {0.0, 1.0};
  }

 private:
  std::variant<BinaryKernelDensity, GaussianKernelDensity> impl_;
};

// One pseudo-treatment per covariate row, stream-keyed by row index.
inline std::vector<double> sample_pseudo_treatments(const TreatmentTarget& target, const Matrix& w,
                                                    std::uint64_t seed) {
  std::vector<double> out(w.rows);
  if (const auto* b = std::get_if<BinaryTarget>(&target)) {
    b->validate();
    for (std::size_t i = 0; i < w.rows; ++i) {
      CounterRng rng(seed, i);
      const std::vector<double> row(w.row(i), w.row(i) + w.cols);
      out[i] = rng.next_bernoulli(b->prob1(row)) ? 1.0 : 0.0;
    }
    return out;
  }
  const auto& g = std::get<GaussianTarget>(target);
  g.validate();
  for (std::size_t i = 0; i < w.rows; ++i) {
    CounterRng rng(seed, i);
    out[i] = rng.next_normal(g.mu, g.sigma);
  }
  return out;
}

// Posterior responsibility tau_i = P(Z=1 | A*_i, W_i) under the current
// policy, computed on the log scale:
//   tau_i = expit( logit(h_i) + log L1_i - log L0_i ).
inline std::vector<double> em_e_step(const std::vector<double>& log_l0, const std::vector<double>& log_l1,
                                     const std::vector<double>& h1) {
  const std::size_t n = h1.size();
  if (log_l0.size() != n || log_l1.size() != n) throw ValidationError("em_e_step: length mismatch");
  std::vector<double> tau(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(h1[i] >= 0.0 && h1[i] <= 1.0)) throw ValidationError("em_e_step: h outside [0,1]");
    const double num = std::log(h1[i]) + log_l1[i];        // may be -inf
    const double den = std::log1p(-h1[i]) + log_l0[i];     // may be -inf
    if (std::isinf(num) && std::isinf(den) && num < 0.0 && den < 0.0)
      throw ValidationError("em_e_step: pseudo-treatment has zero density under both instrument arms at row " +
                            std::to_string(i));
    tau[i] = expit(num - den);
    if (std::isnan(tau[i])) tau[i] = (num > den) ? 1.0 : 0.0;
  }
  return tau;
}

// Penalized weighted logistic M-step on the duplicated design with weights
// (tau, 1-tau); warm-started so the solver's monotonicity carries the EM
// ascent property.
inline HalFit em_m_step(const HalBasis& basis, const Design& dup_design, const std::vector<double>& tau,
                        double lambda, const FitOptions& opts = {}, const HalFit* warm = nullptr) {
  const std::size_t n = tau.size();
  if (dup_design.n != 2 * n) throw ValidationError("em_m_step: design must be the duplicated stack");
  std::vector<double> y2(2 * n, 1.0), w2(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(tau[i] >= 0.0 && tau[i] <= 1.0)) throw ValidationError("em_m_step: tau outside [0,1]");
    y2[n + i] = 0.0;
    w2[i] = tau[i];
    w2[n + i] = 1.0 - tau[i];
  }
  HalFit fit = fit_weighted_l1(basis, dup_design, y2, w2, Link::logit, lambda, opts, warm);
  fit.basis = basis;
  return fit;
}

struct EmConfig {
  HalConfig hal;          // basis + penalty selection (fixed_lambda skips CV)
  double tol = 1e-6;      // |change in penalized log-likelihood|
  std::size_t max_iter = 200;
  double ascent_slack = 1e-8;
};

struct EmState {
  HalFit fit;                         // logistic policy coefficients over the basis
  std::vector<std::size_t> covariate_subset;
  std::vector<double> z_support;
  std::vector<double> pseudo_treatments;
  std::vector<double> tau;            // final E-step posteriors
  std::vector<double> loglik_trace;   // penalized per-observation log-likelihood
  double lambda = 0.0;
  std::size_t iterations = 0;
  bool converged = false;

  InstrumentPolicy policy() const {
    LogisticPolicy p;
    p.covariate_subset = covariate_subset;
    p.z_support = z_support;
    p.fit = fit;
    return InstrumentPolicy(std::move(p));
  }
};

// Penalized observed-data log-likelihood per observation:
//   (1/n) sum_i log( h_i L1_i + (1-h_i) L0_i ) - lambda |beta|_1,
// evaluated on the log scale from the logistic scores.
inline double em_penalized_loglik(const std::vector<double>& scores, const std::vector<double>& log_l0,
                                  const std::vector<double>& log_l1, double lambda,
                                  const std::vector<double>& beta) {
  const std::size_t n = scores.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double la = -softplus(-scores[i]) + log_l1[i];  // log h + log L1
    const double lb = -softplus(scores[i]) + log_l0[i];   // log(1-h) + log L0
    double m = std::max(la, lb);
    if (std::isinf(m) && m < 0.0)
      throw ValidationError("em_penalized_loglik: zero mixture density at row " + std::to_string(i));
    acc += m + std::log1p(std::exp(std::min(la, lb) - m));
  }
  double pen = 0.0;
  for (double b : beta) pen += std::abs(b);
  return acc / static_cast<double>(n) - lambda * pen;
}

inline EmState kl_project(const Matrix& w, const KernelDensity& kernel, const TreatmentTarget& target,
                          std::uint64_t seed, const EmConfig& cfg = {}) {
  if (w.rows == 0) throw ValidationError("kl_project: empty covariate matrix");
  const std::size_t n = w.rows;

  EmState state;
  state.covariate_subset = all_dims(w.cols);
  state.z_support = kernel.z_support();
  state.pseudo_treatments = sample_pseudo_treatments(target, w, seed);

  std::vector<double> log_l0(n), log_l1(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<double> row(w.row(i), w.row(i) + w.cols);
    log_l0[i] = kernel.log_density(state.pseudo_treatments[i], 0, row);
    log_l1[i] = kernel.log_density(state.pseudo_treatments[i], 1, row);
  }

  const std::size_t deg = std::min<std::size_t>(std::max<std::size_t>(cfg.hal.max_degree, 1), w.cols);
  const HalBasis basis = build_basis(w, deg, cfg.hal.max_knots_per_dim);
  const Design dup = duplicate_design(build_design(basis, w));

  // h^0 = 1/2 everywhere.
  state.fit.basis = basis;
  state.fit.link = Link::logit;
  state.fit.beta.assign(basis.n_cols(), 0.0);
  state.fit.intercept = 0.0;

  std::vector<double> scores(n, 0.0);
  const auto recompute_scores = [&]() {
    for (std::size_t i = 0; i < n; ++i) scores[i] = state.fit.score(w.row(i));
  };
  const auto h_from_scores = [&]() {
    std::vector<double> h(n);
    for (std::size_t i = 0; i < n; ++i) h[i] = expit(scores[i]);
    return h;
  };

  state.tau = em_e_step(log_l0, log_l1, h_from_scores());

  // Penalty level: fixed once (cross-validated on the initial posteriors
  // unless pinned). Fold ids pair the two duplicated copies of each row.
  if (cfg.hal.fixed_lambda >= 0.0) {
    state.lambda = cfg.hal.fixed_lambda;
  } else {
    std::vector<double> y2(2 * n, 1.0), w2(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      y2[n + i] = 0.0;
      w2[i] = state.tau[i];
      w2[n + i] = 1.0 - state.tau[i];
    }
    std::vector<double> grid = cfg.hal.lambda_grid;
    if (grid.empty()) grid = default_lambda_grid(dup, y2, w2);
    std::vector<std::size_t> fold_ids(2 * n);
    for (std::size_t i = 0; i < n; ++i) fold_ids[i] = fold_ids[n + i] = i % cfg.hal.n_folds;
    state.lambda =
        cross_validate_lambda(dup, y2, w2, Link::logit, grid, cfg.hal.n_folds, &fold_ids, cfg.hal.fit).lambda;
  }

  state.loglik_trace.push_back(
      em_penalized_loglik(scores, log_l0, log_l1, state.lambda, state.fit.beta));

  for (std::size_t it = 0; it < cfg.max_iter; ++it) {
    state.fit = em_m_step(basis, dup, state.tau, state.lambda, cfg.hal.fit, &state.fit);
    recompute_scores();
    const double ll = em_penalized_loglik(scores, log_l0, log_l1, state.lambda, state.fit.beta);
    const double prev = state.loglik_trace.back();
    if (ll < prev - cfg.ascent_slack)
      throw ConvergenceError("kl_project: EM ascent violated (penalized log-likelihood fell by " +
                             std::to_string(prev - ll) + "); internal invariant breach");
    state.loglik_trace.push_back(ll);
    state.iterations = it + 1;
    state.tau = em_e_step(log_l0, log_l1, h_from_scores());
    if (std::abs(ll - prev) < cfg.tol) {
      state.converged = true;
      break;
    }
  }
  return state;
}

// log of the policy-implied treatment density at a:
//   f_h(a) = (1/n) sum_i sum_z h(z|W_i) p-hat(a | z, W_i).
inline double log_implied_density(const KernelDensity& kernel, const std::vector<double>& h1,
                                  const Matrix& w, double a) {
  const std::size_t n = w.rows;
  if (h1.size() != n) throw ValidationError("log_implied_density: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<double> row(w.row(i), w.row(i) + w.cols);
    const double l0 = kernel.log_density(a, 0, row);
    const double l1 = kernel.log_density(a, 1, row);
    acc += (1.0 - h1[i]) * (std::isinf(l0) ? 0.0 : std::exp(l0)) +
           h1[i] * (std::isinf(l1) ? 0.0 : std::exp(l1));
  }
  return std::log(acc / static_cast<double>(n));
}

// Monte Carlo KL(g* || f_h) for a Gaussian target: draws A ~ g* and averages
// log g*(A) - log f_h(A).
inline double mc_kl_divergence(const GaussianTarget& target, const KernelDensity& kernel,
                               const std::vector<double>& h1, const Matrix& w, std::size_t draws,
                               std::uint64_t seed) {
  target.validate();
  if (draws == 0) throw ValidationError("mc_kl_divergence: need draws >= 1");
  double acc = 0.0;
  for (std::size_t m = 0; m < draws; ++m) {
    CounterRng rng(seed, m);
    const double a = rng.next_normal(target.mu, target.sigma);
    acc += target.log_density(a) - log_implied_density(kernel, h1, w, a);
  }
  return acc / static_cast<double>(draws);
}

}  // namespace ivpol
