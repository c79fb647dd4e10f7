#pragma once

// Shared fixtures: the two-stratum toy NPSEM whose every functional is known
// in closed form, plus a generator of random enumerable specs for property
// tests. Frozen oracle values for the toy world:
//   E[Y|z,w]:   (0,0) -> 0.1   (1,0) -> 0.9   (0,1) -> 2.1   (1,1) -> 1.5
//   psi(h*) = 1.02          psi(natural) = 0.724
//   g(h*)   = (0.58, 0.68)  g(natural)   = (0.42, 0.56)
//   E[A^{h*}] = 0.61        Wald(w) = 2 in both strata

#include <cstdint>
#include <vector>

#include "ivpol/npsem.hpp"
#include "ivpol/policy.hpp"
#include "ivpol/rng.hpp"

namespace ivtest {

inline ivpol::NpsemSpec toy_spec() {
  ivpol::NpsemSpec spec;
  spec.covariate_levels = {{0.0}, {1.0}};
  spec.covariate_pmf = {0.7, 0.3};
  spec.z_support = {0.0, 1.0};
  spec.instrument_policy = {{0.7, 0.3}, {0.2, 0.8}};
  spec.treatment_kernel = {{0.3, 0.7}, {0.8, 0.5}};
  spec.outcome_alpha = 2.0;
  spec.outcome_gamma = {1.0};
  spec.outcome_delta = -1.0;
  spec.outcome_noise_sd = 0.05;
  spec.outcome_mode = ivpol::OutcomeMode::additive;
  return spec;
}

// h*(1|w=0) = 0.7, h*(1|w=1) = 0.4.
inline ivpol::TabularPolicy toy_policy() {
  ivpol::TabularPolicy pol;
  pol.covariate_subset = {0};
  pol.z_support = {0.0, 1.0};
  pol.pmf[{0.0}] = {0.3, 0.7};
  pol.pmf[{1.0}] = {0.6, 0.4};
  return pol;
}

// Random enumerable binary-instrument spec: 1 or 2 binary covariates, all
// probabilities bounded away from {0, 1}, and every stratum's arm gap
// |p(1|z=1,w) - p(1|z=0,w)| at least min_arm_gap (0 disables the constraint).
inline ivpol::NpsemSpec random_spec(ivpol::CounterRng& rng, double min_arm_gap = 0.05) {
  ivpol::NpsemSpec spec;
  const std::size_t d = 1 + (rng.next_u01() < 0.5 ? 0 : 1);
  const std::size_t n_strata = std::size_t{1} << d;
  for (std::size_t s = 0; s < n_strata; ++s) {
    std::vector<double> level(d);
    for (std::size_t j = 0; j < d; ++j) level[j] = static_cast<double>((s >> j) & 1);
    spec.covariate_levels.push_back(level);
  }
  double total = 0.0;
  for (std::size_t s = 0; s < n_strata; ++s) {
    spec.covariate_pmf.push_back(0.05 + 0.95 * rng.next_u01());
    total += spec.covariate_pmf.back();
  }
  for (double& p : spec.covariate_pmf) p /= total;

  spec.z_support = {0.0, 1.0};
  for (std::size_t s = 0; s < n_strata; ++s) {
    const double h1 = 0.05 + 0.9 * rng.next_u01();
    spec.instrument_policy.push_back({1.0 - h1, h1});
    double p0 = 0.0, p1 = 0.0;
    do {
      p0 = 0.02 + 0.96 * rng.next_u01();
      p1 = 0.02 + 0.96 * rng.next_u01();
    } while (std::abs(p1 - p0) < min_arm_gap);
    spec.treatment_kernel.push_back({p0, p1});
  }
  spec.outcome_alpha = -1.0 + 4.0 * rng.next_u01();
  spec.outcome_gamma.assign(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) spec.outcome_gamma[j] = -1.0 + 2.0 * rng.next_u01();
  spec.outcome_delta = -1.5 + 3.0 * rng.next_u01();
  spec.outcome_noise_sd = 0.1;
  spec.outcome_mode = ivpol::OutcomeMode::additive;
  spec.validate();
  return spec;
}

// Random instrument policy over the spec's strata, bounded away from 0/1.
inline ivpol::TabularPolicy random_policy(const ivpol::NpsemSpec& spec, ivpol::CounterRng& rng) {
  ivpol::TabularPolicy pol;
  pol.covariate_subset = ivpol::all_dims(spec.dim());
  pol.z_support = spec.z_support;
  for (const auto& level : spec.covariate_levels) {
    const double h1 = 0.05 + 0.9 * rng.next_u01();
    pol.pmf[level] = {1.0 - h1, h1};
  }
  return pol;
}

}  // namespace ivtest
