#pragma once

// The induced-marginal operator and its relatives: the treatment marginal
// g(h*) produced by an instrument policy, its Bayes-form dual route, the
// conditional response matrix B, inversion from a treatment target back to
// an instrument policy, Z-compatibility, and the reduced-covariate
// identification family.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ivpol/common.hpp"
#include "ivpol/npsem.hpp"
#include "ivpol/nuisance.hpp"
#include "ivpol/policy.hpp"

namespace ivpol {

// g(h*)(1|w) = sum_z p(1|z,w) h*(z|w), one value per kernel stratum.
inline InducedMarginal induced_marginal(const ConditionalKernel& kernel, const InstrumentPolicy& policy) {
  if (kernel.z_support != policy.z_support())
    throw ValidationError("induced_marginal: kernel and policy instrument supports differ");
  if (!subset_of(policy.covariate_subset(), kernel.covariate_subset))
    throw ValidationError("induced_marginal: policy reads covariates outside the kernel strata");
  InducedMarginal out;
  out.covariate_subset = kernel.covariate_subset;
  out.provenance = "direct";
  for (const auto& [key, p1_row] : kernel.p1) {
    const std::vector<double> pi = policy.pmf_at_indexed(key, kernel.covariate_subset);
    double g1 = 0.0;
    for (std::size_t zi = 0; zi < p1_row.size(); ++zi) g1 += pi[zi] * p1_row[zi];
    out.g1[key] = g1;
  }
  out.validate();
  return out;
}

// Per-row induced values for non-tabular kernels evaluated at full rows.
inline std::vector<double> induced_values_at_rows(const ConditionalKernel& kernel,
                                                  const InstrumentPolicy& policy, const Matrix& w) {
  std::vector<double> out(w.rows);
  for (std::size_t i = 0; i < w.rows; ++i) {
    const std::vector<double> row(w.row(i), w.row(i) + w.cols);
    const std::vector<double> pi = policy.pmf_at(row);
    double g1 = 0.0;
    for (std::size_t zi = 0; zi < kernel.z_support.size(); ++zi)
      g1 += pi[zi] * kernel.prob_a1(zi, row);
    out[i] = g1;
  }
  return out;
}

// Bayes route: g(h*)(a|w) = g(a|w) * E[ h*(Z|w)/h(Z|w) | A=a, W=w ], computed
// literally through the posterior P(z|a,w) = p(a|z,w) h(z|w) / g(a|w).
// Must agree with the direct route to floating-point precision.
inline InducedMarginal induced_marginal_bayes(const ConditionalKernel& kernel,
                                              const InstrumentDensity& natural,
                                              const InstrumentPolicy& policy) {
  if (kernel.kind != KernelKind::tabular)
    throw ValidationError("induced_marginal_bayes: needs a tabular kernel");
  if (kernel.z_support != policy.z_support() || kernel.z_support != natural.z_support)
    throw ValidationError("induced_marginal_bayes: instrument supports differ");
  if (!subset_of(policy.covariate_subset(), kernel.covariate_subset) ||
      !subset_of(natural.covariate_subset, kernel.covariate_subset))
    throw ValidationError("induced_marginal_bayes: covariate subsets incompatible with kernel strata");

  InducedMarginal out;
  out.covariate_subset = kernel.covariate_subset;
  out.provenance = "bayes";
  const std::size_t nz = kernel.z_support.size();
  for (const auto& [key, p1_row] : kernel.p1) {
    const std::vector<double> pi = policy.pmf_at_indexed(key, kernel.covariate_subset);
    const StratumKey hkey = translate_key(key, kernel.covariate_subset, natural.covariate_subset);
    auto hit = natural.pmf.find(hkey);
    if (hit == natural.pmf.end())
      throw ValidationError("induced_marginal_bayes: no instrument density for stratum " + key_to_string(hkey));
    const std::vector<double>& h = hit->second;
    for (std::size_t zi = 0; zi < nz; ++zi)
      if (pi[zi] > 0.0 && h[zi] == 0.0)
        throw PositivityError("induced_marginal_bayes: policy mass at z=" +
                              std::to_string(kernel.z_support[zi]) + ", w=" + key_to_string(key) +
                              " where the natural instrument density is zero");

    const auto bayes_for_arm = [&](bool arm1) -> double {
      double g_obs = 0.0;
      for (std::size_t zi = 0; zi < nz; ++zi)
        g_obs += h[zi] * (arm1 ? p1_row[zi] : 1.0 - p1_row[zi]);
      if (g_obs == 0.0) return 0.0;  // no mass on this arm; the target puts none either
      double ratio_mean = 0.0;
      for (std::size_t zi = 0; zi < nz; ++zi) {
        if (h[zi] == 0.0) continue;  // posterior carries no mass here
        const double post = (arm1 ? p1_row[zi] : 1.0 - p1_row[zi]) * h[zi] / g_obs;
        ratio_mean += post * (pi[zi] / h[zi]);
      }
      return g_obs * ratio_mean;
    };

    double g1 = 0.0;
    for (std::size_t zi = 0; zi < nz; ++zi) g1 += h[zi] * p1_row[zi];
    out.g1[key] = (g1 > 0.0) ? bayes_for_arm(true) : 1.0 - bayes_for_arm(false);
  }
  out.validate();
  return out;
}

// Conditional response matrix B[a][z] = P(A=a | Z=z, stratum), column-stochastic.
struct BMatrix {
  std::size_t n_a = 0, n_z = 0;
  std::vector<double> entries;  // row-major a x z

  double at(std::size_t a, std::size_t z) const { return entries[a * n_z + z]; }
  double& at(std::size_t a, std::size_t z) { return entries[a * n_z + z]; }

  void validate(double tol = 1e-9) const {
    if (entries.size() != n_a * n_z || n_a == 0 || n_z == 0)
      throw ValidationError("BMatrix: bad shape");
    for (double v : entries)
      if (!std::isfinite(v) || v < -tol || v > 1.0 + tol)
        throw ValidationError("BMatrix: entry outside [0,1]");
    for (std::size_t z = 0; z < n_z; ++z) {
      double col = 0.0;
      for (std::size_t a = 0; a < n_a; ++a) col += at(a, z);
      if (std::abs(col - 1.0) > tol)
        throw ValidationError("BMatrix: column " + std::to_string(z) + " does not sum to 1");
    }
  }
};

// B at one covariate stratum from a binary-treatment kernel: rows a in {0,1}.
inline BMatrix build_b_matrix(const ConditionalKernel& kernel, const std::vector<double>& w_full) {
  BMatrix b;
  b.n_a = 2;
  b.n_z = kernel.z_support.size();
  b.entries.resize(b.n_a * b.n_z);
  for (std::size_t zi = 0; zi < b.n_z; ++zi) {
    const double p1 = kernel.prob_a1(zi, w_full);
    b.at(0, zi) = 1.0 - p1;
    b.at(1, zi) = p1;
  }
  b.validate();
  return b;
}

// Pooled empirical B from raw data: P-hat(A=a | Z=z) ignoring covariates.
inline BMatrix build_b_matrix_pooled(const ObservedDataset& data) {
  data.validate();
  const std::vector<double> zs = detail::distinct_sorted(data.z);
  for (double a : data.a)
    if (a != 0.0 && a != 1.0) throw ValidationError("build_b_matrix_pooled: treatment must be binary 0/1");
  std::vector<double> count(zs.size(), 0.0), ones(zs.size(), 0.0);
  for (std::size_t i = 0; i < data.n(); ++i) {
    const std::size_t zi = detail::z_index_of(zs, data.z[i]);
    count[zi] += 1.0;
    ones[zi] += data.a[i];
  }
  BMatrix b;
  b.n_a = 2;
  b.n_z = zs.size();
  b.entries.resize(2 * zs.size());
  for (std::size_t zi = 0; zi < zs.size(); ++zi) {
    if (count[zi] == 0.0)
      throw ValidationError("build_b_matrix_pooled: no observations at z=" + std::to_string(zs[zi]));
    const double p1 = ones[zi] / count[zi];
    b.at(0, zi) = 1.0 - p1;
    b.at(1, zi) = p1;
  }
  b.validate();
  return b;
}

// A binary target g* is reachable by some instrument policy at a stratum iff
// it lies between the two arm response rates; when the instrument does not
// move the treatment (g0 == g1 within tol), only g* == g0 is compatible.
inline bool z_compatible(double g_star, double g_z0, double g_z1, double tol = 1e-9) {
  const double lo = std::min(g_z0, g_z1), hi = std::max(g_z0, g_z1);
  if (hi - lo <= tol) return std::abs(g_star - g_z0) <= tol;
  return g_star >= lo - tol && g_star <= hi + tol;
}

// Inverts a Z-compatible binary target to the implied instrument policy
//   h*(1|w) = (g*(w) - g_{z0}(w)) / (g_{z1}(w) - g_{z0}(w)).
// On degenerate strata (g_z0 == g_z1) any h attains the target; the natural
// policy value is kept there when supplied, else h = 1/2.
inline InstrumentPolicy implied_policy_for_target(const ConditionalKernel& kernel, const BinaryTarget& target,
                                                  const InstrumentPolicy* natural = nullptr,
                                                  double tol = 1e-9) {
  if (kernel.kind != KernelKind::tabular)
    throw ValidationError("implied_policy_for_target: needs a tabular kernel");
  if (kernel.z_support.size() != 2)
    throw ValidationError("implied_policy_for_target: needs a binary instrument");
  if (!subset_of(target.covariate_subset, kernel.covariate_subset))
    throw ValidationError("implied_policy_for_target: target reads covariates outside the kernel strata");

  TabularPolicy t;
  t.covariate_subset = kernel.covariate_subset;
  t.z_support = kernel.z_support;
  for (const auto& [key, p1_row] : kernel.p1) {
    const double g0 = p1_row[0], g1 = p1_row[1];
    const StratumKey tkey = translate_key(key, kernel.covariate_subset, target.covariate_subset);
    auto it = target.g1.find(tkey);
    if (it == target.g1.end())
      throw ValidationError("implied_policy_for_target: no target value for stratum " + key_to_string(tkey));
    const double gs = it->second;
    if (!z_compatible(gs, g0, g1, tol))
      throw ValidationError("implied_policy_for_target: target " + std::to_string(gs) +
                            " is not Z-compatible at stratum w=" + key_to_string(key) + " (arm rates " +
                            std::to_string(g0) + ", " + std::to_string(g1) + ")");
    double h1;
    if (std::abs(g1 - g0) <= tol) {
      h1 = 0.5;
      if (natural != nullptr) h1 = natural->pmf_at_indexed(key, kernel.covariate_subset)[1];
    } else {
      h1 = std::clamp((gs - g0) / (g1 - g0), 0.0, 1.0);
    }
    t.pmf[key] = {1.0 - h1, h1};
  }
  return InstrumentPolicy(std::move(t));
}

// ---- reduced-covariate identification family ----

struct ReducedFamilyEntry {
  std::vector<std::size_t> subset;  // S
  InducedMarginal marginal;         // induced marginal over S strata
  double gcomp = 0.0;               // reduced G-computation value
};

struct ReducedFamily {
  std::vector<ReducedFamilyEntry> entries;
  double max_gap = 0.0;  // max pairwise |gcomp_S - gcomp_S'|
  // L-inf spread of the natural instrument density across covariate strata;
  // 0 means h(z|w) = h(z) and the family members must agree exactly.
  double instrument_covariate_dependence = 0.0;
};

namespace detail {

inline double pairwise_gap(const std::vector<ReducedFamilyEntry>& entries) {
  double gap = 0.0;
  for (std::size_t i = 0; i < entries.size(); ++i)
    for (std::size_t j = i + 1; j < entries.size(); ++j)
      gap = std::max(gap, std::abs(entries[i].gcomp - entries[j].gcomp));
  return gap;
}

inline double density_spread(const std::vector<std::vector<double>>& rows) {
  double spread = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j)
      for (std::size_t z = 0; z < rows[i].size(); ++z)
        spread = std::max(spread, std::abs(rows[i][z] - rows[j][z]));
  return spread;
}

}  // namespace detail

// Exact family over a discrete spec. For each S containing the policy's
// covariates S', computes E[Y | z, W_S] and p(A=1 | z, W_S) by marginalizing
// the full strata with weights P(w) h_nat(z|w), then the reduced
// G-computation value and induced marginal. When the natural instrument
// density does not depend on W, every member identifies the same value.
inline ReducedFamily reduced_family_exact(const NpsemSpec& spec, const InstrumentPolicy& policy,
                                          const std::vector<std::vector<std::size_t>>& subsets) {
  spec.validate();
  if (policy.z_support() != spec.z_support)
    throw ValidationError("reduced_family_exact: policy support differs from spec");
  ReducedFamily fam;
  fam.instrument_covariate_dependence = detail::density_spread(spec.instrument_policy);
  const std::vector<std::size_t> full = all_dims(spec.dim());

  for (const auto& subset : subsets) {
    if (!subset_of(policy.covariate_subset(), subset))
      throw ValidationError("reduced_family_exact: policy covariates must be contained in every subset");
    if (!subset_of(subset, full)) throw ValidationError("reduced_family_exact: subset out of range");

    struct Cell {
      double mass = 0.0;                  // P(w_S)
      std::vector<double> zmass;          // sum_w P(w) h(z|w)
      std::vector<double> zy;             // sum_w P(w) h(z|w) E[Y|z,w]
      std::vector<double> za;             // sum_w P(w) h(z|w) p(1|z,w)
    };
    StratumTable<Cell> cells;
    for (std::size_t s = 0; s < spec.n_strata(); ++s) {
      const StratumKey key = project_key(spec.covariate_levels[s], subset);
      auto& c = cells.try_emplace(key, Cell{}).first->second;
      if (c.zmass.empty()) {
        c.zmass.assign(spec.n_z(), 0.0);
        c.zy.assign(spec.n_z(), 0.0);
        c.za.assign(spec.n_z(), 0.0);
      }
      c.mass += spec.covariate_pmf[s];
      for (std::size_t zi = 0; zi < spec.n_z(); ++zi) {
        const double wgt = spec.covariate_pmf[s] * spec.instrument_policy[s][zi];
        c.zmass[zi] += wgt;
        c.zy[zi] += wgt * conditional_outcome_mean(spec, s, zi);
        c.za[zi] += wgt * spec.treatment_kernel[s][zi];
      }
    }

    ReducedFamilyEntry entry;
    entry.subset = subset;
    entry.marginal.covariate_subset = subset;
    entry.marginal.provenance = "reduced:exact";
    double psi = 0.0;
    for (const auto& [key, c] : cells) {
      if (c.mass == 0.0) continue;
      const std::vector<double> pi = policy.pmf_at_indexed(key, subset);
      double inner = 0.0, g1 = 0.0;
      for (std::size_t zi = 0; zi < spec.n_z(); ++zi) {
        if (pi[zi] == 0.0) continue;
        if (c.zmass[zi] == 0.0)
          throw PositivityError("reduced_family_exact: policy mass at z=" +
                                std::to_string(spec.z_support[zi]) + ", stratum " + key_to_string(key) +
                                " never assigned under the natural instrument density");
        inner += pi[zi] * (c.zy[zi] / c.zmass[zi]);
        g1 += pi[zi] * (c.za[zi] / c.zmass[zi]);
      }
      psi += c.mass * inner;
      entry.marginal.g1[key] = g1;
    }
    entry.gcomp = psi;
    fam.entries.push_back(std::move(entry));
  }
  fam.max_gap = detail::pairwise_gap(fam.entries);
  return fam;
}

// Empirical family: per-subset tabular kernel and saturated outcome means,
// averaged over the empirical covariate distribution.
inline ReducedFamily reduced_family_empirical(const ObservedDataset& data, const InstrumentPolicy& policy,
                                              const std::vector<std::vector<std::size_t>>& subsets) {
  data.validate();
  ReducedFamily fam;
  {
    const InstrumentDensity hfull = fit_instrument_density(data);
    std::vector<std::vector<double>> rows;
    rows.reserve(hfull.pmf.size());
    for (const auto& [key, row] : hfull.pmf) rows.push_back(row);
    fam.instrument_covariate_dependence = detail::density_spread(rows);
  }
  const std::vector<double> zs = detail::distinct_sorted(data.z);

  for (const auto& subset : subsets) {
    if (!subset_of(policy.covariate_subset(), subset))
      throw ValidationError("reduced_family_empirical: policy covariates must be contained in every subset");
    ConditionalKernel kernel = fit_treatment_kernel(data, KernelKind::tabular, subset);
    if (kernel.z_support != policy.z_support())
      throw ValidationError("reduced_family_empirical: policy support differs from data");

    // Saturated E[Y | z, w_S].
    StratumTable<std::vector<double>> ysum, ycount;
    for (std::size_t i = 0; i < data.n(); ++i) {
      const StratumKey key = project_key(data.w.row(i), data.d(), subset);
      auto& s = ysum.try_emplace(key, std::vector<double>(zs.size(), 0.0)).first->second;
      auto& c = ycount.try_emplace(key, std::vector<double>(zs.size(), 0.0)).first->second;
      const std::size_t zi = detail::z_index_of(zs, data.z[i]);
      s[zi] += data.y[i];
      c[zi] += 1.0;
    }

    ReducedFamilyEntry entry;
    entry.subset = subset;
    entry.marginal = induced_marginal(kernel, policy);
    entry.marginal.provenance = "reduced:empirical";
    double psi = 0.0;
    for (std::size_t i = 0; i < data.n(); ++i) {
      const StratumKey key = project_key(data.w.row(i), data.d(), subset);
      const std::vector<double> pi = policy.pmf_at_indexed(key, subset);
      const auto& s = ysum.at(key);
      const auto& c = ycount.at(key);
      double inner = 0.0;
      for (std::size_t zi = 0; zi < zs.size(); ++zi) {
        if (pi[zi] == 0.0) continue;
        if (c[zi] == 0.0)
          throw PositivityError("reduced_family_empirical: policy mass at z=" + std::to_string(zs[zi]) +
                                ", stratum " + key_to_string(key) + " with no observations");
        inner += pi[zi] * (s[zi] / c[zi]);
      }
      psi += inner;
    }
    entry.gcomp = psi / static_cast<double>(data.n());
    fam.entries.push_back(std::move(entry));
  }
  fam.max_gap = detail::pairwise_gap(fam.entries);
  return fam;
}

}  // namespace ivpol
