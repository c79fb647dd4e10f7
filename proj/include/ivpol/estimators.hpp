#pragma once

// Estimators for E[Y^{h*}]: plug-in G-computation, the efficient influence
// curve, a one-step targeted update (intercept-only weighted logistic
// fluctuation with the policy-ratio clever weights), the Wald-style contrast
// between two Z-compatible targets, and the bakeoff replication harness.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <thread>
#include <vector>

#include "ivpol/common.hpp"
#include "ivpol/induced.hpp"
#include "ivpol/npsem.hpp"
#include "ivpol/nuisance.hpp"
#include "ivpol/policy.hpp"
#include "ivpol/rng.hpp"

namespace ivpol {

namespace detail {

// Per-stratum caches so row loops cost O(1) lookups.
struct StratumCache {
  std::vector<StratumKey> keys;
  std::vector<std::size_t> row_stratum;          // n
  std::vector<std::vector<double>> policy_pmf;   // per stratum
  std::vector<std::vector<double>> q_pred;       // per stratum, per z index
  std::vector<std::vector<double>> h_pmf;        // per stratum (optional use)
};

inline StratumCache build_stratum_cache(const ObservedDataset& data, const OutcomeRegression* q,
                                        const InstrumentPolicy& policy, const InstrumentDensity* h,
                                        std::size_t n_z) {
  StratumCache c;
  std::map<StratumKey, std::size_t> index;
  c.row_stratum.resize(data.n());
  for (std::size_t i = 0; i < data.n(); ++i) {
    StratumKey key = data.w_row(i);
    auto [it, inserted] = index.try_emplace(std::move(key), c.keys.size());
    if (inserted) c.keys.push_back(it->first);
    c.row_stratum[i] = it->second;
  }
  c.policy_pmf.resize(c.keys.size());
  if (q != nullptr) c.q_pred.resize(c.keys.size());
  if (h != nullptr) c.h_pmf.resize(c.keys.size());
  for (std::size_t s = 0; s < c.keys.size(); ++s) {
    const auto& w = c.keys[s];
    c.policy_pmf[s] = policy.pmf_at(w);
    if (c.policy_pmf[s].size() != n_z)
      throw ValidationError("policy instrument support size mismatch");
    if (q != nullptr) {
      c.q_pred[s].resize(n_z);
      for (std::size_t zi = 0; zi < n_z; ++zi) c.q_pred[s][zi] = q->predict(zi, w);
    }
    if (h != nullptr) {
      c.h_pmf[s].resize(n_z);
      for (std::size_t zi = 0; zi < n_z; ++zi) c.h_pmf[s][zi] = h->prob(zi, w);
    }
  }
  return c;
}

// Assumption 5 on the observed rows: the clever weight h*(Z_i|W_i)/h(Z_i|W_i)
// must be finite wherever the policy places mass. Unobserved (stratum, level)
// cells are deliberately not checked here — the plug-in term extrapolates
// through Q there, which is how the replication harness treats sparse draws.
inline double clever_weight(double hstar, double hnat, const char* where) {
  if (hstar <= 0.0) return 0.0;
  if (hnat <= 0.0)
    throw PositivityError(std::string(where) +
                          ": policy mass at an observed row where the fitted instrument density is zero");
  return hstar / hnat;
}

}  // namespace detail

// Plug-in G-computation: psi = (1/n) sum_i sum_z Q(z, W_i) h*(z | W_i).
inline double gcomp_estimate(const ObservedDataset& data, const OutcomeRegression& q,
                             const InstrumentPolicy& policy) {
  data.validate();
  if (q.z_support != policy.z_support())
    throw ValidationError("gcomp_estimate: outcome regression and policy instrument supports differ");
  const std::size_t n_z = q.z_support.size();
  const auto cache = detail::build_stratum_cache(data, &q, policy, nullptr, n_z);
  double acc = 0.0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    const std::size_t s = cache.row_stratum[i];
    double inner = 0.0;
    for (std::size_t zi = 0; zi < n_z; ++zi) inner += cache.q_pred[s][zi] * cache.policy_pmf[s][zi];
    acc += inner;
  }
  return acc / static_cast<double>(data.n());
}

// Efficient influence curve at (Q, h-hat, h*, psi):
//   D_i = (h*(Z_i|W_i)/h-hat(Z_i|W_i)) (Y_i - Q(Z_i,W_i))
//         + sum_z Q(z,W_i) h*(z|W_i) - psi.
inline std::vector<double> eic_values(const ObservedDataset& data, const OutcomeRegression& q,
                                      const InstrumentDensity& h_nat, const InstrumentPolicy& policy,
                                      double psi) {
  data.validate();
  if (q.z_support != policy.z_support() || q.z_support != h_nat.z_support)
    throw ValidationError("eic_values: instrument supports differ");
  const std::size_t n_z = q.z_support.size();
  const auto cache = detail::build_stratum_cache(data, &q, policy, &h_nat, n_z);
  std::vector<double> out(data.n());
  for (std::size_t i = 0; i < data.n(); ++i) {
    const std::size_t s = cache.row_stratum[i];
    const std::size_t zi = detail::z_index_of(q.z_support, data.z[i]);
    const double weight = detail::clever_weight(cache.policy_pmf[s][zi], cache.h_pmf[s][zi], "eic_values");
    double plug = 0.0;
    for (std::size_t z2 = 0; z2 < n_z; ++z2) plug += cache.q_pred[s][z2] * cache.policy_pmf[s][z2];
    out[i] = weight * (data.y[i] - cache.q_pred[s][zi]) + plug - psi;
  }
  return out;
}

struct TmleResult {
  double psi = 0.0;
  double se = 0.0;
  double ci_lo = 0.0, ci_hi = 0.0;
  double alpha = 0.05;
  double epsilon = 0.0;     // fluctuation coefficient
  double mean_eic = 0.0;
  double plugin_psi = 0.0;  // G-computation at the initial outcome regression
  bool converged = false;
  std::vector<double> eic;
};

// One-step TMLE. The outcome is mapped to [0,1] by the observed range
// widened by 1e-6; the fluctuation is an intercept-only logistic regression
// with offset logit(Q0) and the policy ratio as sampling weights, solved by
// safeguarded Newton; a single update targets every (z, w) prediction.
inline TmleResult tmle_estimate(const ObservedDataset& data, const OutcomeRegression& q_init,
                                const InstrumentDensity& h_nat, const InstrumentPolicy& policy,
                                double alpha = 0.05) {
  data.validate();
  if (data.n() < 2) throw ValidationError("tmle_estimate: need at least two observations");
  if (q_init.z_support != policy.z_support() || q_init.z_support != h_nat.z_support)
    throw ValidationError("tmle_estimate: instrument supports differ");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("tmle_estimate: alpha must lie in (0,1)");
  const std::size_t n = data.n();
  const std::size_t n_z = q_init.z_support.size();
  const auto cache = detail::build_stratum_cache(data, &q_init, policy, &h_nat, n_z);

  const double y_lo = *std::min_element(data.y.begin(), data.y.end()) - 1e-6;
  const double y_hi = *std::max_element(data.y.begin(), data.y.end()) + 1e-6;
  const double span = y_hi - y_lo;

  // Logit-scale offsets per (stratum, z); bounded predictions.
  std::vector<std::vector<double>> offset(cache.keys.size(), std::vector<double>(n_z));
  for (std::size_t s = 0; s < cache.keys.size(); ++s)
    for (std::size_t zi = 0; zi < n_z; ++zi)
      offset[s][zi] = logit(clamp01((cache.q_pred[s][zi] - y_lo) / span, 1e-10));

  std::vector<double> weight(n), ytil(n), l_obs(n);
  std::vector<std::size_t> z_idx(n);
  double weight_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t s = cache.row_stratum[i];
    const std::size_t zi = detail::z_index_of(q_init.z_support, data.z[i]);
    z_idx[i] = zi;
    weight[i] = detail::clever_weight(cache.policy_pmf[s][zi], cache.h_pmf[s][zi], "tmle_estimate");
    if (!std::isfinite(weight[i])) throw PositivityError("tmle_estimate: non-finite clever weight");
    weight_sum += weight[i];
    ytil[i] = (data.y[i] - y_lo) / span;
    l_obs[i] = offset[s][zi];
  }

  // Score in epsilon: sum_i w_i (ytil_i - expit(l_i + eps)), strictly decreasing.
  const auto score = [&](double eps) {
    double f = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (weight[i] != 0.0) f += weight[i] * (ytil[i] - expit(l_obs[i] + eps));
    return f;
  };
  double eps = 0.0;
  bool converged = false;
  if (weight_sum > 0.0) {
    double lo = -30.0, hi = 30.0;
    const double tol = 1e-12 * std::max(1.0, weight_sum);
    for (int it = 0; it < 200; ++it) {
      const double f = score(eps);
      if (std::abs(f) <= tol) { converged = true; break; }
      if (f > 0.0) lo = std::max(lo, eps); else hi = std::min(hi, eps);
      double fprime = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (weight[i] == 0.0) continue;
        const double p = expit(l_obs[i] + eps);
        fprime -= weight[i] * p * (1.0 - p);
      }
      double next = (fprime < 0.0) ? eps - f / fprime : (lo + hi) / 2.0;
      if (!(next > lo && next < hi)) next = (lo + hi) / 2.0;
      if (std::abs(next - eps) < 1e-14 * (1.0 + std::abs(eps))) { eps = next; converged = true; break; }
      eps = next;
    }
    if (!converged) throw ConvergenceError("tmle_estimate: fluctuation solver did not converge");
  } else {
    converged = true;  // no mass to fluctuate; update is the identity
  }

  // Targeted predictions on the original scale.
  std::vector<std::vector<double>> q_upd(cache.keys.size(), std::vector<double>(n_z));
  for (std::size_t s = 0; s < cache.keys.size(); ++s)
    for (std::size_t zi = 0; zi < n_z; ++zi)
      q_upd[s][zi] = y_lo + span * expit(offset[s][zi] + eps);

  TmleResult res;
  res.alpha = alpha;
  res.epsilon = eps;
  res.converged = converged;
  double psi = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t s = cache.row_stratum[i];
    double inner = 0.0;
    for (std::size_t zi = 0; zi < n_z; ++zi) inner += q_upd[s][zi] * cache.policy_pmf[s][zi];
    psi += inner;
  }
  psi /= static_cast<double>(n);
  res.psi = psi;

  res.eic.resize(n);
  double mean_eic = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t s = cache.row_stratum[i];
    double plug = 0.0;
    for (std::size_t zi = 0; zi < n_z; ++zi) plug += q_upd[s][zi] * cache.policy_pmf[s][zi];
    res.eic[i] = weight[i] * (data.y[i] - q_upd[s][z_idx[i]]) + plug - psi;
    mean_eic += res.eic[i];
  }
  mean_eic /= static_cast<double>(n);
  res.mean_eic = mean_eic;
  double var = 0.0;
  for (double d : res.eic) var += (d - mean_eic) * (d - mean_eic);
  var /= static_cast<double>(n);
  res.se = std::sqrt(var / static_cast<double>(n));
  const double zq = CounterRng::inverse_normal_cdf(1.0 - alpha / 2.0);
  res.ci_lo = psi - zq * res.se;
  res.ci_hi = psi + zq * res.se;

  // Plug-in companion at the un-fluctuated regression.
  double plugin = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t s = cache.row_stratum[i];
    double inner = 0.0;
    for (std::size_t zi = 0; zi < n_z; ++zi) inner += cache.q_pred[s][zi] * cache.policy_pmf[s][zi];
    plugin += inner;
  }
  res.plugin_psi = plugin / static_cast<double>(n);
  return res;
}

// Wald-style contrast between two Z-compatible targets:
//   E[Y^{g*}] - E[Y^{f*}] = sum_w P(w) (g*(w) - f*(w)) *
//       (E[Y|z1,w] - E[Y|z0,w]) / (g_{z1}(w) - g_{z0}(w)),
// with the product defined as zero on degenerate strata (g_{z1} == g_{z0};
// Z-compatibility forces g* == f* there).
inline double wald_contrast(const ConditionalKernel& kernel, const StratumTable<std::vector<double>>& q_by_z,
                            const StratumTable<double>& w_pmf, const InducedMarginal& g_star,
                            const InducedMarginal& f_star, double degenerate_tol = 1e-12) {
  if (kernel.kind != KernelKind::tabular || kernel.z_support.size() != 2)
    throw ValidationError("wald_contrast: needs a tabular kernel over a binary instrument");
  double acc = 0.0;
  for (const auto& [key, mass] : w_pmf) {
    auto kit = kernel.p1.find(key);
    if (kit == kernel.p1.end())
      throw ValidationError("wald_contrast: no kernel row for stratum " + key_to_string(key));
    auto qit = q_by_z.find(key);
    if (qit == q_by_z.end())
      throw ValidationError("wald_contrast: no outcome means for stratum " + key_to_string(key));
    const StratumKey gkey = translate_key(key, kernel.covariate_subset, g_star.covariate_subset);
    const StratumKey fkey = translate_key(key, kernel.covariate_subset, f_star.covariate_subset);
    const double gs = g_star.g1.at(gkey);
    const double fs = f_star.g1.at(fkey);
    const double den = kit->second[1] - kit->second[0];
    if (std::abs(den) <= degenerate_tol) {
      if (std::abs(gs - fs) > 1e-9)
        throw ValidationError("wald_contrast: targets differ on the degenerate stratum " + key_to_string(key));
      continue;
    }
    const double wald = (qit->second[1] - qit->second[0]) / den;
    acc += mass * (gs - fs) * wald;
  }
  return acc;
}

// ---- replication harness ----

struct Table1Config {
  std::vector<std::size_t> n_list{100, 500, 1000, 2000, 10000};
  std::size_t replications = 1000;
  std::uint64_t seed = 1;
  double alpha = 0.05;   // primary coverage level
  double alpha2 = 0.10;  // companion coverage level
  QKind q_kind = QKind::ols_main_effects;
  std::size_t threads = 0;  // 0 -> hardware concurrency
};

struct Table1Row {
  std::size_t n = 0;
  double mean_tmle = 0.0, mean_plugin = 0.0, mean_se = 0.0;
  double coverage = 0.0;   // at alpha
  double coverage2 = 0.0;  // at alpha2
  std::vector<double> tmle_estimates;    // per replication, for histograms
  std::vector<double> plugin_estimates;  // per replication
};

struct Table1Report {
  double truth = 0.0;
  double alpha = 0.05, alpha2 = 0.10;
  std::size_t replications = 0;
  std::uint64_t seed = 0;
  std::vector<Table1Row> rows;
};

// The natural instrument assignment of a spec, packaged as a density over the
// full covariate vector. In the replication harness this is what goes into
// the clever weights: the simulation study treats h as known by design (only
// the outcome regression is estimated), which is also what reproduces the
// reference table's sigma-hat column; data-facing paths fit h instead.
inline InstrumentDensity natural_instrument_density(const NpsemSpec& spec) {
  spec.validate();
  InstrumentDensity h;
  h.z_support = spec.z_support;
  h.covariate_subset.resize(spec.dim());
  for (std::size_t j = 0; j < spec.dim(); ++j) h.covariate_subset[j] = j;
  for (std::size_t s = 0; s < spec.n_strata(); ++s)
    h.pmf[spec.covariate_levels[s]] = spec.instrument_policy[s];
  return h;
}

// One replication: simulate, fit the (misspecified) outcome regression, then
// TMLE with the known instrument density in the weights, plus its plug-in
// companion.
inline Table1Report replicate_table1(const NpsemSpec& spec, const InstrumentPolicy& policy,
                                     const Table1Config& cfg) {
  spec.validate();
  if (cfg.replications == 0) throw ValidationError("replicate_table1: need replications >= 1");
  Table1Report report;
  report.truth = population_truth(spec, policy);
  report.alpha = cfg.alpha;
  report.alpha2 = cfg.alpha2;
  report.replications = cfg.replications;
  report.seed = cfg.seed;

  const double zq = CounterRng::inverse_normal_cdf(1.0 - cfg.alpha / 2.0);
  const double zq2 = CounterRng::inverse_normal_cdf(1.0 - cfg.alpha2 / 2.0);
  const InstrumentDensity h_known = natural_instrument_density(spec);

  for (std::size_t batch = 0; batch < cfg.n_list.size(); ++batch) {
    const std::size_t n = cfg.n_list[batch];
    Table1Row row;
    row.n = n;
    row.tmle_estimates.assign(cfg.replications, 0.0);
    row.plugin_estimates.assign(cfg.replications, 0.0);
    std::vector<double> ses(cfg.replications, 0.0);

    const auto run_range = [&](std::size_t lo, std::size_t hi) {
      for (std::size_t r = lo; r < hi; ++r) {
        const std::uint64_t rep_seed = derive_seed(cfg.seed, batch, r);
        const ObservedDataset data = simulate_natural(spec, n, rep_seed);
        const OutcomeRegression q = fit_outcome_regression(data, cfg.q_kind);
        const TmleResult t = tmle_estimate(data, q, h_known, policy, cfg.alpha);
        row.tmle_estimates[r] = t.psi;
        row.plugin_estimates[r] = t.plugin_psi;
        ses[r] = t.se;
      }
    };
    std::size_t threads = cfg.threads;
    if (threads == 0) threads = std::max<unsigned>(1, std::thread::hardware_concurrency());
    threads = std::min(threads, cfg.replications);
    if (threads <= 1) {
      run_range(0, cfg.replications);
    } else {
      std::vector<std::thread> pool;
      const std::size_t chunk = (cfg.replications + threads - 1) / threads;
      for (std::size_t t = 0; t < threads; ++t) {
        const std::size_t lo = t * chunk, hi = std::min(cfg.replications, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back(run_range, lo, hi);
      }
      for (auto& th : pool) th.join();
    }

    for (std::size_t r = 0; r < cfg.replications; ++r) {
      row.mean_tmle += row.tmle_estimates[r];
      row.mean_plugin += row.plugin_estimates[r];
      row.mean_se += ses[r];
      row.coverage += (std::abs(row.tmle_estimates[r] - report.truth) <= zq * ses[r]) ? 1.0 : 0.0;
      row.coverage2 += (std::abs(row.tmle_estimates[r] - report.truth) <= zq2 * ses[r]) ? 1.0 : 0.0;
    }
    const double b = static_cast<double>(cfg.replications);
    row.mean_tmle /= b;
    row.mean_plugin /= b;
    row.mean_se /= b;
    row.coverage /= b;
    row.coverage2 /= b;
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace ivpol
