#pragma once

// Instrument policies h*(z|w) and treatment targets g*(a|w). A policy is
// either a tabular pmf over instrument levels per covariate stratum, or a
// logistic score over a HAL basis (binary instruments only, as produced by
// the KL projection). Policies evaluate on full covariate rows; tabular
// lookups project onto their declared covariate subset.

#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include "ivpol/common.hpp"
#include "ivpol/hal.hpp"

namespace ivpol {

struct TabularPolicy {
  std::vector<std::size_t> covariate_subset;  // empty = unconditional
  std::vector<double> z_support;
  StratumTable<std::vector<double>> pmf;  // per stratum, aligned with z_support

  void validate() const {
    if (z_support.empty()) throw ValidationError("TabularPolicy: empty instrument support");
    for (const auto& [key, row] : pmf) {
      if (key.size() != covariate_subset.size())
        throw ValidationError("TabularPolicy: stratum key arity mismatch at " + key_to_string(key));
      if (row.size() != z_support.size())
        throw ValidationError("TabularPolicy: pmf row length mismatch at " + key_to_string(key));
      double sum = 0.0;
      for (double p : row) {
        if (!std::isfinite(p) || p < 0.0 || p > 1.0)
          throw ValidationError("TabularPolicy: probability outside [0,1] at " + key_to_string(key));
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-12)
        throw ValidationError("TabularPolicy: pmf row does not sum to 1 at " + key_to_string(key));
    }
  }
};

struct LogisticPolicy {
  std::vector<std::size_t> covariate_subset;  // dims the basis reads
  std::vector<double> z_support;              // exactly two levels; fit scores the second
  HalFit fit;

  void validate() const {
    if (z_support.size() != 2) throw ValidationError("LogisticPolicy: needs exactly two instrument levels");
  }
};

class InstrumentPolicy {
 public:
  InstrumentPolicy() = default;
  explicit InstrumentPolicy(TabularPolicy t) : impl_(std::move(t)) { tabular().validate(); }
  explicit InstrumentPolicy(LogisticPolicy l) : impl_(std::move(l)) { logistic().validate(); }

  bool is_tabular() const { return std::holds_alternative<TabularPolicy>(impl_); }
  const TabularPolicy& tabular() const { return std::get<TabularPolicy>(impl_); }
  const LogisticPolicy& logistic() const { return std::get<LogisticPolicy>(impl_); }

  const std::vector<double>& z_support() const {
    return is_tabular() ? tabular().z_support : logistic().z_support;
  }

  const std::vector<std::size_t>& covariate_subset() const {
    return is_tabular() ? tabular().covariate_subset : logistic().covariate_subset;
  }

  // pmf over z_support given stratum values whose full-space dims are
  // value_dims; the policy's covariate subset must be contained in them.
  std::vector<double> pmf_at_indexed(const StratumKey& values, const std::vector<std::size_t>& value_dims) const {
    if (is_tabular()) {
      const auto& t = tabular();
      const StratumKey key = translate_key(values, value_dims, t.covariate_subset);
      auto it = t.pmf.find(key);
      if (it == t.pmf.end())
        throw ValidationError("InstrumentPolicy: no pmf for stratum " + key_to_string(key));
      return it->second;
    }
    const auto& l = logistic();
    const StratumKey key = translate_key(values, value_dims, l.covariate_subset);
    const double p1 = expit(l.fit.score(key.data()));
    return {1.0 - p1, p1};
  }

  // pmf over z_support at a full covariate row.
  std::vector<double> pmf_at(const std::vector<double>& w_full) const {
    if (is_tabular()) {
      const auto& t = tabular();
      const StratumKey key = project_key(w_full, t.covariate_subset);
      auto it = t.pmf.find(key);
      if (it == t.pmf.end())
        throw ValidationError("InstrumentPolicy: no pmf for stratum " + key_to_string(key));
      return it->second;
    }
    const auto& l = logistic();
    const StratumKey key = project_key(w_full, l.covariate_subset);
    const double p1 = expit(l.fit.score(key.data()));
    return {1.0 - p1, p1};
  }

  double prob(std::size_t z_index, const std::vector<double>& w_full) const {
    const auto p = pmf_at(w_full);
    if (z_index >= p.size()) throw ValidationError("InstrumentPolicy: instrument index out of range");
    return p[z_index];
  }

 private:
  std::variant<TabularPolicy, LogisticPolicy> impl_;
};

// Induced treatment marginal g(h*)(A=1 | w) per stratum of a covariate
// subset, with a provenance note ("direct", "bayes", "exact", "reduced:...").
struct InducedMarginal {
  std::vector<std::size_t> covariate_subset;
  StratumTable<double> g1;
  std::string provenance;

  double prob1(const std::vector<double>& w_full) const {
    const StratumKey key = project_key(w_full, covariate_subset);
    auto it = g1.find(key);
    if (it == g1.end())
      throw ValidationError("InducedMarginal: no value for stratum " + key_to_string(key));
    return it->second;
  }

  void validate() const {
    for (const auto& [key, p] : g1)
      if (!std::isfinite(p) || p < -1e-12 || p > 1.0 + 1e-12)
        throw ValidationError("InducedMarginal: probability outside [0,1] at " + key_to_string(key));
  }
};

// Binary treatment target: g*(A=1 | w) per stratum of a covariate subset.
struct BinaryTarget {
  std::vector<std::size_t> covariate_subset;
  StratumTable<double> g1;

  double prob1(const std::vector<double>& w_full) const {
    const StratumKey key = project_key(w_full, covariate_subset);
    auto it = g1.find(key);
    if (it == g1.end()) throw ValidationError("BinaryTarget: no value for stratum " + key_to_string(key));
    return it->second;
  }

  void validate() const {
    for (const auto& [key, p] : g1)
      if (!std::isfinite(p) || p < 0.0 || p > 1.0)
        throw ValidationError("BinaryTarget: probability outside [0,1] at " + key_to_string(key));
  }
};

// Continuous treatment target: a Gaussian density over treatment values.
struct GaussianTarget {
  double mu = 0.0;
  double sigma = 1.0;

  void validate() const {
    if (!(sigma > 0.0) || !std::isfinite(mu)) throw ValidationError("GaussianTarget: need sigma > 0, finite mu");
  }
  double log_density(double a) const {
    const double z = (a - mu) / sigma;
    return -0.5 * z * z - std::log(sigma) - 0.9189385332046727418;  // log sqrt(2 pi)
  }
};

using TreatmentTarget = std::variant<BinaryTarget, GaussianTarget>;

}  // namespace ivpol
