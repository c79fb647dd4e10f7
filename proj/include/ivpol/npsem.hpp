#pragma once

// Discrete NPSEM lab with hidden confounding. Structural equations:
//   W ~ covariate_pmf over covariate_levels
//   Z ~ instrument_policy(.|W)                (natural instrument assignment)
//   A = 1{U < treatment_kernel(Z,W)},  U ~ Uniform(0,1)
//   additive:                 Y = alpha*A + gamma.W + delta*U + noise_sd*N(0,1)
//   multiplicative_confounding: Y = A*U + gamma.W + noise_sd*N(0,1)
// The same U drives A and Y, so Z is a valid instrument while A is
// confounded. Intervened worlds replace only the instrument assignment and
// propagate the same latent draws. All conditional means are available in
// closed form (E[U | U < p] = p/2), which the enumeration oracles use.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ivpol/common.hpp"
#include "ivpol/policy.hpp"
#include "ivpol/rng.hpp"

namespace ivpol {

enum class OutcomeMode { additive, multiplicative_confounding };

struct NpsemSpec {
  std::vector<std::vector<double>> covariate_levels;   // strata, each a d-vector
  std::vector<double> covariate_pmf;                   // P(W = stratum)
  std::vector<double> z_support;                       // instrument levels
  std::vector<std::vector<double>> instrument_policy;  // [stratum][z] natural h(z|w)
  std::vector<std::vector<double>> treatment_kernel;   // [stratum][z] P(A=1|z,w)
  double outcome_alpha = 0.0;
  std::vector<double> outcome_gamma;                   // one slope per covariate dim
  double outcome_delta = 0.0;                          // unused under multiplicative mode
  double outcome_noise_sd = 0.0;
  OutcomeMode outcome_mode = OutcomeMode::additive;

  std::size_t dim() const { return covariate_levels.empty() ? 0 : covariate_levels.front().size(); }
  std::size_t n_strata() const { return covariate_levels.size(); }
  std::size_t n_z() const { return z_support.size(); }

  void validate() const {
    if (covariate_levels.empty()) throw ValidationError("NpsemSpec: no covariate strata");
    const std::size_t d = dim();
    for (const auto& lv : covariate_levels) {
      if (lv.size() != d) throw ValidationError("NpsemSpec: ragged covariate_levels");
      require_all_finite(lv.begin(), lv.end(), "NpsemSpec: covariate_levels");
    }
    for (std::size_t i = 0; i < covariate_levels.size(); ++i)
      for (std::size_t j = i + 1; j < covariate_levels.size(); ++j)
        if (covariate_levels[i] == covariate_levels[j])
          throw ValidationError("NpsemSpec: duplicate covariate stratum " + key_to_string(covariate_levels[i]));
    if (covariate_pmf.size() != n_strata()) throw ValidationError("NpsemSpec: covariate_pmf length mismatch");
    check_pmf(covariate_pmf, "covariate_pmf");
    if (z_support.size() < 2) throw ValidationError("NpsemSpec: need at least two instrument levels");
    for (std::size_t i = 0; i < z_support.size(); ++i)
      for (std::size_t j = i + 1; j < z_support.size(); ++j)
        if (z_support[i] == z_support[j]) throw ValidationError("NpsemSpec: duplicate instrument levels");
    if (instrument_policy.size() != n_strata())
      throw ValidationError("NpsemSpec: instrument_policy needs one row per stratum");
    for (const auto& row : instrument_policy) {
      if (row.size() != n_z()) throw ValidationError("NpsemSpec: instrument_policy row length mismatch");
      check_pmf(row, "instrument_policy row");
    }
    if (treatment_kernel.size() != n_strata())
      throw ValidationError("NpsemSpec: treatment_kernel needs one row per stratum");
    for (const auto& row : treatment_kernel) {
      if (row.size() != n_z()) throw ValidationError("NpsemSpec: treatment_kernel row length mismatch");
      for (double p : row)
        if (!std::isfinite(p) || p < 0.0 || p > 1.0)
          throw ValidationError("NpsemSpec: treatment_kernel probability outside [0,1]");
    }
    if (outcome_gamma.size() != d) throw ValidationError("NpsemSpec: outcome_gamma length mismatch");
    require_all_finite(outcome_gamma.begin(), outcome_gamma.end(), "NpsemSpec: outcome_gamma");
    require_finite(outcome_alpha, "NpsemSpec: outcome_alpha");
    require_finite(outcome_delta, "NpsemSpec: outcome_delta");
    if (!std::isfinite(outcome_noise_sd) || outcome_noise_sd < 0.0)
      throw ValidationError("NpsemSpec: outcome_noise_sd must be >= 0");
  }

 private:
  static void check_pmf(const std::vector<double>& pmf, const char* what) {
    double sum = 0.0;
    for (double p : pmf) {
      if (!std::isfinite(p) || p < 0.0 || p > 1.0)
        throw ValidationError(std::string("NpsemSpec: ") + what + " entry outside [0,1]");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12)
      throw ValidationError(std::string("NpsemSpec: ") + what + " does not sum to 1");
  }
};

struct ObservedDataset {
  Matrix w;  // n x d covariates
  std::vector<double> z, a, y;

  std::size_t n() const { return w.rows; }
  std::size_t d() const { return w.cols; }
  std::vector<double> w_row(std::size_t i) const {
    return std::vector<double>(w.row(i), w.row(i) + w.cols);
  }

  void validate() const {
    if (z.size() != n() || a.size() != n() || y.size() != n())
      throw ValidationError("ObservedDataset: column length mismatch");
    require_all_finite(w.data.begin(), w.data.end(), "ObservedDataset: w");
    require_all_finite(z.begin(), z.end(), "ObservedDataset: z");
    require_all_finite(a.begin(), a.end(), "ObservedDataset: a");
    require_all_finite(y.begin(), y.end(), "ObservedDataset: y");
  }
};

enum class WorldTag { instrument_intervention, independent_policy };

inline const char* world_tag_name(WorldTag t) {
  return t == WorldTag::instrument_intervention ? "instrument_intervention" : "independent_policy";
}

struct CounterfactualDataset {
  Matrix w;
  std::vector<double> z;  // empty under independent_policy (no instrument in that world)
  std::vector<double> a, y;
  WorldTag world_tag = WorldTag::instrument_intervention;

  std::size_t n() const { return w.rows; }
  std::vector<double> w_row(std::size_t i) const {
    return std::vector<double>(w.row(i), w.row(i) + w.cols);
  }
};

// The natural instrument assignment as a tabular policy over all covariates.
inline InstrumentPolicy natural_policy(const NpsemSpec& spec) {
  TabularPolicy t;
  t.covariate_subset = all_dims(spec.dim());
  t.z_support = spec.z_support;
  for (std::size_t s = 0; s < spec.n_strata(); ++s)
    t.pmf[spec.covariate_levels[s]] = spec.instrument_policy[s];
  return InstrumentPolicy(std::move(t));
}

namespace detail {

// Checks policy support against the natural assignment (positivity): the
// policy may only place mass where the natural instrument density is positive.
inline void check_policy_against_spec(const NpsemSpec& spec, const InstrumentPolicy& policy,
                                      std::vector<std::vector<double>>& pmf_rows) {
  if (policy.z_support() != spec.z_support)
    throw ValidationError("instrument policy support differs from spec z_support");
  pmf_rows.resize(spec.n_strata());
  for (std::size_t s = 0; s < spec.n_strata(); ++s) {
    pmf_rows[s] = policy.pmf_at(spec.covariate_levels[s]);
    for (std::size_t zi = 0; zi < spec.n_z(); ++zi) {
      if (pmf_rows[s][zi] > 0.0 && spec.instrument_policy[s][zi] == 0.0)
        throw PositivityError("policy places mass on z=" + std::to_string(spec.z_support[zi]) +
                              " at stratum w=" + key_to_string(spec.covariate_levels[s]) +
                              " where the natural instrument density is zero");
    }
  }
}

inline double dot_gamma(const NpsemSpec& spec, std::size_t stratum) {
  double g = 0.0;
  const auto& w = spec.covariate_levels[stratum];
  for (std::size_t k = 0; k < w.size(); ++k) g += spec.outcome_gamma[k] * w[k];
  return g;
}

inline double outcome_value(const NpsemSpec& spec, double a, std::size_t stratum, double u, double eps) {
  const double base = dot_gamma(spec, stratum) + spec.outcome_noise_sd * eps;
  if (spec.outcome_mode == OutcomeMode::additive)
    return spec.outcome_alpha * a + spec.outcome_delta * u + base;
  return a * u + base;
}

}  // namespace detail

// Simulates the intervened NPSEM where only the instrument assignment is
// replaced; the latent draws (confounder U, outcome noise) propagate
// unchanged. With the natural policy this reproduces simulate_natural
// row for row at the same seed.
inline CounterfactualDataset simulate_instrument_intervention(const NpsemSpec& spec,
                                                              const InstrumentPolicy& policy,
                                                              std::size_t n, std::uint64_t seed) {
  spec.validate();
  std::vector<std::vector<double>> pmf_rows;
  detail::check_policy_against_spec(spec, policy, pmf_rows);

  CounterfactualDataset out;
  out.world_tag = WorldTag::instrument_intervention;
  out.w = Matrix(n, spec.dim());
  out.z.resize(n);
  out.a.resize(n);
  out.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    CounterRng rng(seed, i);
    const double u_w = rng.next_u01();
    const double u_z = rng.next_u01();
    const double u = rng.next_u01();
    const double eps = rng.next_normal();
    std::size_t s = spec.n_strata() - 1;
    {
      double cum = 0.0;
      for (std::size_t k = 0; k + 1 < spec.n_strata(); ++k) {
        cum += spec.covariate_pmf[k];
        if (u_w < cum) { s = k; break; }
      }
    }
    std::size_t zi = spec.n_z() - 1;
    {
      double cum = 0.0;
      for (std::size_t k = 0; k + 1 < spec.n_z(); ++k) {
        cum += pmf_rows[s][k];
        if (u_z < cum) { zi = k; break; }
      }
    }
    const double a = (u < spec.treatment_kernel[s][zi]) ? 1.0 : 0.0;
    const auto& lv = spec.covariate_levels[s];
    for (std::size_t k = 0; k < lv.size(); ++k) out.w(i, k) = lv[k];
    out.z[i] = spec.z_support[zi];
    out.a[i] = a;
    out.y[i] = detail::outcome_value(spec, a, s, u, eps);
  }
  return out;
}

inline ObservedDataset simulate_natural(const NpsemSpec& spec, std::size_t n, std::uint64_t seed) {
  const CounterfactualDataset cf = simulate_instrument_intervention(spec, natural_policy(spec), n, seed);
  ObservedDataset out;
  out.w = cf.w;
  out.z = cf.z;
  out.a = cf.a;
  out.y = cf.y;
  return out;
}

// Independent-draw world: the treatment is drawn from the target marginal via
// a fresh uniform channel, independent of both the confounder U and the
// outcome noise. U still enters the outcome equation.
inline CounterfactualDataset simulate_independent_policy(const NpsemSpec& spec, const TreatmentTarget& target,
                                                         std::size_t n, std::uint64_t seed) {
  spec.validate();
  const auto* binary = std::get_if<BinaryTarget>(&target);
  if (binary == nullptr)
    throw ValidationError("simulate_independent_policy: discrete spec needs a binary treatment target");
  binary->validate();

  CounterfactualDataset out;
  out.world_tag = WorldTag::independent_policy;
  out.w = Matrix(n, spec.dim());
  out.a.resize(n);
  out.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    CounterRng rng(seed, i);
    const double u_w = rng.next_u01();
    rng.next_u01();  // natural-instrument channel, unused in this world
    const double u = rng.next_u01();
    const double eps = rng.next_normal();
    const double v = rng.next_u01();
    std::size_t s = spec.n_strata() - 1;
    {
      double cum = 0.0;
      for (std::size_t k = 0; k + 1 < spec.n_strata(); ++k) {
        cum += spec.covariate_pmf[k];
        if (u_w < cum) { s = k; break; }
      }
    }
    const double g1 = binary->prob1(spec.covariate_levels[s]);
    const double a = (v < g1) ? 1.0 : 0.0;
    const auto& lv = spec.covariate_levels[s];
    for (std::size_t k = 0; k < lv.size(); ++k) out.w(i, k) = lv[k];
    out.a[i] = a;
    out.y[i] = detail::outcome_value(spec, a, s, u, eps);
  }
  return out;
}

// ---- exact enumeration oracles ----

// E[Y | Z=z, W=stratum]; uses E[U] = 1/2 and E[A U | z,w] = p(z,w)^2 / 2.
inline double conditional_outcome_mean(const NpsemSpec& spec, std::size_t stratum, std::size_t z_index) {
  const double p = spec.treatment_kernel[stratum][z_index];
  const double base = detail::dot_gamma(spec, stratum);
  if (spec.outcome_mode == OutcomeMode::additive)
    return spec.outcome_alpha * p + spec.outcome_delta * 0.5 + base;
  return 0.5 * p * p + base;
}

// Same mean by the propagation route: sum over treatment arms with the
// truncated-confounder means E[U | A=1] = p/2, E[U | A=0] = (1+p)/2.
inline double conditional_outcome_mean_propagated(const NpsemSpec& spec, std::size_t stratum,
                                                  std::size_t z_index) {
  const double p = spec.treatment_kernel[stratum][z_index];
  const double base = detail::dot_gamma(spec, stratum);
  double acc = 0.0;
  for (int a = 0; a <= 1; ++a) {
    const double pa = (a == 1) ? p : 1.0 - p;
    if (pa == 0.0) continue;
    const double u_mean = (a == 1) ? p / 2.0 : (1.0 + p) / 2.0;
    const double y_mean = (spec.outcome_mode == OutcomeMode::additive)
                              ? spec.outcome_alpha * a + spec.outcome_delta * u_mean + base
                              : a * u_mean + base;
    acc += pa * y_mean;
  }
  return acc;
}

// E[Y^{h*}] by exact enumeration over (W, Z).
inline double population_truth(const NpsemSpec& spec, const InstrumentPolicy& policy) {
  spec.validate();
  std::vector<std::vector<double>> pmf_rows;
  detail::check_policy_against_spec(spec, policy, pmf_rows);
  double acc = 0.0;
  for (std::size_t s = 0; s < spec.n_strata(); ++s) {
    double inner = 0.0;
    for (std::size_t zi = 0; zi < spec.n_z(); ++zi)
      inner += pmf_rows[s][zi] * conditional_outcome_mean(spec, s, zi);
    acc += spec.covariate_pmf[s] * inner;
  }
  return acc;
}

// E[Y^{h*}] with the outcome mean taken through the treatment-arm route;
// must agree with population_truth to floating-point precision.
inline double population_truth_propagated(const NpsemSpec& spec, const InstrumentPolicy& policy) {
  spec.validate();
  std::vector<std::vector<double>> pmf_rows;
  detail::check_policy_against_spec(spec, policy, pmf_rows);
  double acc = 0.0;
  for (std::size_t s = 0; s < spec.n_strata(); ++s) {
    double inner = 0.0;
    for (std::size_t zi = 0; zi < spec.n_z(); ++zi)
      inner += pmf_rows[s][zi] * conditional_outcome_mean_propagated(spec, s, zi);
    acc += spec.covariate_pmf[s] * inner;
  }
  return acc;
}

// E[A^{h*}] by exact enumeration.
inline double population_treatment_mean(const NpsemSpec& spec, const InstrumentPolicy& policy) {
  spec.validate();
  std::vector<std::vector<double>> pmf_rows;
  detail::check_policy_against_spec(spec, policy, pmf_rows);
  double acc = 0.0;
  for (std::size_t s = 0; s < spec.n_strata(); ++s) {
    double inner = 0.0;
    for (std::size_t zi = 0; zi < spec.n_z(); ++zi)
      inner += pmf_rows[s][zi] * spec.treatment_kernel[s][zi];
    acc += spec.covariate_pmf[s] * inner;
  }
  return acc;
}

// E[Y] in the independent-draw world: the treatment is a fresh draw from the
// target, so E[A U] = g*(w) E[U] = g*(w)/2 under multiplicative confounding.
inline double population_mean_independent(const NpsemSpec& spec, const BinaryTarget& target) {
  spec.validate();
  target.validate();
  double acc = 0.0;
  for (std::size_t s = 0; s < spec.n_strata(); ++s) {
    const double g1 = target.prob1(spec.covariate_levels[s]);
    const double base = detail::dot_gamma(spec, s);
    const double mean = (spec.outcome_mode == OutcomeMode::additive)
                            ? spec.outcome_alpha * g1 + spec.outcome_delta * 0.5 + base
                            : 0.5 * g1 + base;
    acc += spec.covariate_pmf[s] * mean;
  }
  return acc;
}

// Exact induced treatment marginal g(h*)(1|w) = sum_z p(1|z,w) h*(z|w).
inline InducedMarginal exact_induced(const NpsemSpec& spec, const InstrumentPolicy& policy) {
  spec.validate();
  std::vector<std::vector<double>> pmf_rows;
  detail::check_policy_against_spec(spec, policy, pmf_rows);
  InducedMarginal out;
  out.covariate_subset = all_dims(spec.dim());
  out.provenance = "exact";
  for (std::size_t s = 0; s < spec.n_strata(); ++s) {
    double g1 = 0.0;
    for (std::size_t zi = 0; zi < spec.n_z(); ++zi)
      g1 += pmf_rows[s][zi] * spec.treatment_kernel[s][zi];
    out.g1[spec.covariate_levels[s]] = g1;
  }
  return out;
}

}  // namespace ivpol
