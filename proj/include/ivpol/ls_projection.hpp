#pragma once

// Least-squares projection of a marginal treatment target onto the induced
// family g = B h over the probability simplex, via projected gradient
// descent, plus the analytic Gaussian-tilt policy family used to probe the
// first-order (C = 1) approximation of exponential tilts.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "ivpol/common.hpp"
#include "ivpol/induced.hpp"

namespace ivpol {

inline std::vector<double> implied_marginal(const BMatrix& b, const std::vector<double>& h) {
  if (h.size() != b.n_z) throw ValidationError("implied_marginal: h length must match columns of B");
  std::vector<double> g(b.n_a, 0.0);
  for (std::size_t a = 0; a < b.n_a; ++a)
    for (std::size_t z = 0; z < b.n_z; ++z) g[a] += b.at(a, z) * h[z];
  return g;
}

namespace detail {
inline std::vector<double> ls_weights_or_uniform(const BMatrix& b, const std::vector<double>* weights) {
  if (weights == nullptr) return std::vector<double>(b.n_a, 1.0);
  if (weights->size() != b.n_a) throw ValidationError("weights length must match rows of B");
  for (double w : *weights)
    if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("weights must be finite and non-negative");
  return *weights;
}
}  // namespace detail

// Weighted squared-error risk sum_a w_a (g*_a - (Bh)_a)^2.
inline double ls_risk(const BMatrix& b, const std::vector<double>& g_star, const std::vector<double>& h,
                      const std::vector<double>* weights = nullptr) {
  if (g_star.size() != b.n_a) throw ValidationError("ls_risk: g* length must match rows of B");
  const std::vector<double> wts = detail::ls_weights_or_uniform(b, weights);
  const std::vector<double> g = implied_marginal(b, h);
  double risk = 0.0;
  for (std::size_t a = 0; a < b.n_a; ++a) {
    const double r = g_star[a] - g[a];
    risk += wts[a] * r * r;
  }
  return risk;
}

// Gradient of the risk in h: -2 B^T W (g* - Bh).
inline std::vector<double> descent_direction(const BMatrix& b, const std::vector<double>& g_star,
                                             const std::vector<double>& h,
                                             const std::vector<double>* weights = nullptr) {
  if (g_star.size() != b.n_a) throw ValidationError("descent_direction: g* length must match rows of B");
  const std::vector<double> wts = detail::ls_weights_or_uniform(b, weights);
  const std::vector<double> g = implied_marginal(b, h);
  std::vector<double> grad(b.n_z, 0.0);
  for (std::size_t z = 0; z < b.n_z; ++z)
    for (std::size_t a = 0; a < b.n_a; ++a) grad[z] += -2.0 * b.at(a, z) * wts[a] * (g_star[a] - g[a]);
  return grad;
}

// The same direction rescaled elementwise by the current policy,
// -2 h (.) B^T W (g* - Bh): the gradient under a multiplicative
// parameterization of h, exposed for direct evaluation.
inline std::vector<double> rescaled_descent_direction(const BMatrix& b, const std::vector<double>& g_star,
                                                      const std::vector<double>& h,
                                                      const std::vector<double>* weights = nullptr) {
  std::vector<double> d = descent_direction(b, g_star, h, weights);
  for (std::size_t z = 0; z < b.n_z; ++z) d[z] *= h[z];
  return d;
}

// Euclidean projection onto the probability simplex (sort-and-threshold).
inline std::vector<double> project_simplex(const std::vector<double>& v) {
  const std::size_t k = v.size();
  if (k == 0) throw ValidationError("project_simplex: empty vector");
  require_all_finite(v.begin(), v.end(), "project_simplex input");
  std::vector<double> u = v;
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0, theta = 0.0;
  std::size_t rho = 0;
  for (std::size_t j = 0; j < k; ++j) {
    css += u[j];
    const double t = (css - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0.0) {
      rho = j + 1;
      theta = t;
    }
  }
  std::vector<double> out(k);
  for (std::size_t j = 0; j < k; ++j) out[j] = std::max(v[j] - theta, 0.0);
  return out;
}

// Unconstrained minimizer of the weighted risk: solves (B^T W B) h = B^T W g*.
// May land outside the simplex; that is the point of exposing it.
inline std::vector<double> unconstrained_solution(const BMatrix& b, const std::vector<double>& g_star,
                                                  const std::vector<double>* weights = nullptr) {
  if (g_star.size() != b.n_a) throw ValidationError("unconstrained_solution: g* length must match rows of B");
  const std::vector<double> wts = detail::ls_weights_or_uniform(b, weights);
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(b.n_z, b.n_z);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(b.n_z);
  for (std::size_t a = 0; a < b.n_a; ++a)
    for (std::size_t z = 0; z < b.n_z; ++z) {
      rhs(static_cast<Eigen::Index>(z)) += b.at(a, z) * wts[a] * g_star[a];
      for (std::size_t z2 = 0; z2 < b.n_z; ++z2)
        m(static_cast<Eigen::Index>(z), static_cast<Eigen::Index>(z2)) += b.at(a, z) * wts[a] * b.at(a, z2);
    }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(m);
  lu.setThreshold(1e-10);
  if (lu.rank() < static_cast<Eigen::Index>(b.n_z))
    throw ValidationError(
        "unconstrained_solution: normal matrix is singular (B is not injective); the constrained "
        "projection is still well-defined — use the projected-descent path");
  const Eigen::VectorXd sol = lu.solve(rhs);
  return std::vector<double>(sol.data(), sol.data() + sol.size());
}

struct PgdConfig {
  double step = 0.1;
  double tol = 1e-9;            // max-norm change in the iterate
  std::size_t max_iter = 100000;
  std::vector<double> weights;  // empty => uniform
};

struct PgdState {
  std::vector<double> h;
  double risk = 0.0;
  std::vector<double> risk_trace;  // accepted iterates only; non-increasing
  std::size_t iterations = 0;
  bool converged = false;
  double final_step = 0.0;
};

// Projected gradient descent h <- Proj_simplex(h - t * grad), halving the
// step whenever a candidate raises the risk.
inline PgdState ls_project(const BMatrix& b, const std::vector<double>& g_star,
                           const std::vector<double>* h0 = nullptr, const PgdConfig& cfg = {}) {
  b.validate();
  if (g_star.size() != b.n_a) throw ValidationError("ls_project: g* length must match rows of B");
  if (!(cfg.step > 0.0)) throw ValidationError("ls_project: step must be positive");
  const std::vector<double>* wptr = cfg.weights.empty() ? nullptr : &cfg.weights;

  PgdState st;
  if (h0 != nullptr) {
    if (h0->size() != b.n_z) throw ValidationError("ls_project: h0 length must match columns of B");
    st.h = project_simplex(*h0);
  } else {
    st.h.assign(b.n_z, 1.0 / static_cast<double>(b.n_z));
  }
  st.risk = ls_risk(b, g_star, st.h, wptr);
  st.risk_trace.push_back(st.risk);
  double step = cfg.step;

  for (std::size_t it = 0; it < cfg.max_iter; ++it) {
    st.iterations = it + 1;
    const std::vector<double> grad = descent_direction(b, g_star, st.h, wptr);
    std::vector<double> cand(b.n_z);
    for (std::size_t z = 0; z < b.n_z; ++z) cand[z] = st.h[z] - step * grad[z];
    cand = project_simplex(cand);
    const double cand_risk = ls_risk(b, g_star, cand, wptr);
    if (cand_risk > st.risk) {
      step *= 0.5;
      if (step < 1e-18) break;  // no usable step remains
      continue;
    }
    double delta = 0.0;
    for (std::size_t z = 0; z < b.n_z; ++z) delta = std::max(delta, std::abs(cand[z] - st.h[z]));
    st.h = std::move(cand);
    st.risk = cand_risk;
    st.risk_trace.push_back(st.risk);
    if (delta < cfg.tol) {
      st.converged = true;
      break;
    }
  }
  st.final_step = step;
  return st;
}

// Exponential tilt of a Gaussian instrument density by its location score
// psi(z) = -(z - mu) / sigma^2:
//   h_beta(z) = C(beta) h(z) exp(-beta psi(z)),
// which normalizes exactly to N(mu + beta, sigma^2). The first-order family
// fixes C = 1 and is only locally valid; exact_ratio quantifies the gap.
struct GaussianTiltPolicy {
  double mu = 0.0;
  double sigma = 1.0;
  double beta = 0.0;

  void validate() const {
    if (!(sigma > 0.0)) throw ValidationError("GaussianTiltPolicy: sigma must be positive");
    require_finite(mu, "mu");
    require_finite(beta, "beta");
  }

  double score(double z) const { return -(z - mu) / (sigma * sigma); }

  double base_density(double z) const {
    const double t = (z - mu) / sigma;
    return std::exp(-0.5 * t * t) / (sigma * 2.5066282746310005024);
  }

  // C = 1 approximation: h(z) exp(-beta psi(z)).
  double first_order_density(double z) const { return base_density(z) * first_order_ratio(z); }

  double first_order_ratio(double z) const { return std::exp(beta * (z - mu) / (sigma * sigma)); }

  // Exactly normalized tilt, via the closed-form constant C = exp(-beta^2 / (2 sigma^2)).
  double density(double z) const {
    return base_density(z) * std::exp(beta * (z - mu) / (sigma * sigma) - beta * beta / (2.0 * sigma * sigma));
  }

  // The same density written directly as N(mu + beta, sigma^2).
  double exact_shifted_density(double z) const {
    const double t = (z - mu - beta) / sigma;
    return std::exp(-0.5 * t * t) / (sigma * 2.5066282746310005024);
  }

  // density / base_density, in closed form.
  double exact_ratio(double z) const {
    return std::exp(beta * (z - mu) / (sigma * sigma) - beta * beta / (2.0 * sigma * sigma));
  }
};

inline GaussianTiltPolicy gaussian_tilt_policy(double mu, double sigma, double beta) {
  GaussianTiltPolicy p{mu, sigma, beta};
  p.validate();
  return p;
}

}  // namespace ivpol
