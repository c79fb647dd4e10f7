#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "helpers.hpp"
#include "ivpol/estimators.hpp"

using namespace ivpol;

namespace {

ConditionalKernel kernel_of(const NpsemSpec& spec) {
  ConditionalKernel k;
  k.kind = KernelKind::tabular;
  k.z_support = spec.z_support;
  k.covariate_subset = all_dims(spec.dim());
  for (std::size_t s = 0; s < spec.n_strata(); ++s) k.p1[spec.covariate_levels[s]] = spec.treatment_kernel[s];
  return k;
}

// Saturated regression whose cells hold the exact conditional means of spec.
OutcomeRegression exact_q(const NpsemSpec& spec) {
  OutcomeRegression q;
  q.kind = QKind::saturated;
  q.z_support = spec.z_support;
  for (std::size_t s = 0; s < spec.n_strata(); ++s)
    for (std::size_t zi = 0; zi < spec.n_z(); ++zi)
      q.cell_means[{zi, spec.covariate_levels[s]}] = conditional_outcome_mean(spec, s, zi);
  q.y_min = -10.0;
  q.y_max = 10.0;
  return q;
}

// Dataset whose empirical covariate distribution matches the toy pmf exactly.
ObservedDataset toy_shares_dataset() {
  ObservedDataset d;
  std::vector<std::vector<double>> rows;
  for (int i = 0; i < 7; ++i) rows.push_back({0.0});
  for (int i = 0; i < 3; ++i) rows.push_back({1.0});
  d.w = Matrix::from_rows(rows);
  d.z = {0, 1, 0, 1, 0, 1, 0, 0, 1, 0};
  d.a = {0, 1, 0, 1, 0, 0, 1, 1, 1, 0};
  d.y = {0.1, 0.9, 0.2, 0.8, 0.0, 1.0, 0.1, 2.0, 1.6, 2.2};
  return d;
}

}  // namespace

TEST_CASE("g-computation with the exact regression recovers the oracle", "[estimators]") {
  const NpsemSpec spec = ivtest::toy_spec();
  const ObservedDataset d = toy_shares_dataset();
  const double psi = gcomp_estimate(d, exact_q(spec), InstrumentPolicy(ivtest::toy_policy()));
  REQUIRE(std::abs(psi - 1.02) < 1e-12);
  const double psi_nat = gcomp_estimate(d, exact_q(spec), natural_policy(spec));
  REQUIRE(std::abs(psi_nat - 0.724) < 1e-12);
}

TEST_CASE("tmle solves its own score equation", "[estimators]") {
  const NpsemSpec spec = ivtest::toy_spec();
  const InstrumentPolicy star(ivtest::toy_policy());
  const ObservedDataset d = simulate_natural(spec, 2000, 91);
  const OutcomeRegression q = fit_outcome_regression(d, QKind::ols_main_effects);
  const InstrumentDensity h = fit_instrument_density(d);
  const TmleResult t = tmle_estimate(d, q, h, star);

  double sd = 0.0;
  for (double v : t.eic) sd += (v - t.mean_eic) * (v - t.mean_eic);
  sd = std::sqrt(sd / static_cast<double>(t.eic.size()));
  REQUIRE(std::abs(t.mean_eic) < 1e-8 * sd);
  REQUIRE(t.converged);
  REQUIRE(t.se > 0.0);
  REQUIRE(t.ci_lo < t.psi);
  REQUIRE(t.psi < t.ci_hi);
  REQUIRE(std::abs(t.psi - 1.02) < 0.2);

  // Independent of any global state: same inputs, same result bits.
  const TmleResult t2 = tmle_estimate(d, q, h, star);
  REQUIRE(t2.psi == t.psi);
  REQUIRE(t2.se == t.se);
  REQUIRE(t2.epsilon == t.epsilon);
}

TEST_CASE("a saturated initial regression leaves nothing to fluctuate", "[estimators]") {
  const NpsemSpec spec = ivtest::toy_spec();
  const InstrumentPolicy star(ivtest::toy_policy());
  const ObservedDataset d = simulate_natural(spec, 700, 14);
  const OutcomeRegression q = fit_outcome_regression(d, QKind::saturated);
  const InstrumentDensity h = fit_instrument_density(d);
  const TmleResult t = tmle_estimate(d, q, h, star);
  REQUIRE(t.epsilon == 0.0);
  REQUIRE(std::abs(t.psi - t.plugin_psi) < 1e-12);
  REQUIRE(std::abs(t.plugin_psi - gcomp_estimate(d, q, star)) < 1e-15);
}

TEST_CASE("positivity violations are reported, not averaged over", "[estimators]") {
  // A density fitted elsewhere assigns zero to (z=1, w=1), yet that pair is
  // observed here and the policy gives it mass: the clever weight blows up.
  ObservedDataset d;
  d.w = Matrix::from_rows({{0.0}, {0.0}, {0.0}, {0.0}, {1.0}, {1.0}});
  d.z = {0, 1, 0, 1, 0, 1};
  d.a = {0, 1, 1, 0, 1, 0};
  d.y = {0.2, 0.9, 0.4, 0.1, 2.0, 1.8};
  const OutcomeRegression q = fit_outcome_regression(d, QKind::ols_main_effects);
  InstrumentDensity h;
  h.z_support = {0.0, 1.0};
  h.covariate_subset = {0};
  h.pmf[{0.0}] = {0.5, 0.5};
  h.pmf[{1.0}] = {1.0, 0.0};
  const InstrumentPolicy star(ivtest::toy_policy());
  REQUIRE_THROWS_AS(tmle_estimate(d, q, h, star), PositivityError);
  REQUIRE_THROWS_AS(eic_values(d, q, h, star, 1.0), PositivityError);

  // The same density is harmless when no observed row touches the zero cell:
  // the plug-in term extrapolates through Q instead of erroring.
  ObservedDataset sparse = d;
  sparse.z[5] = 0.0;
  REQUIRE_NOTHROW(tmle_estimate(sparse, fit_outcome_regression(sparse, QKind::ols_main_effects), h, star));
}

TEST_CASE("wald contrast reproduces the oracle difference on the base case", "[estimators]") {
  const NpsemSpec spec = ivtest::toy_spec();
  const ConditionalKernel k = kernel_of(spec);
  StratumTable<std::vector<double>> q_by_z;
  StratumTable<double> w_pmf;
  for (std::size_t s = 0; s < spec.n_strata(); ++s) {
    std::vector<double> q(spec.n_z());
    for (std::size_t zi = 0; zi < spec.n_z(); ++zi) q[zi] = conditional_outcome_mean(spec, s, zi);
    q_by_z[spec.covariate_levels[s]] = q;
    w_pmf[spec.covariate_levels[s]] = spec.covariate_pmf[s];
  }
  const InducedMarginal g_star = exact_induced(spec, InstrumentPolicy(ivtest::toy_policy()));
  const InducedMarginal f_star = exact_induced(spec, natural_policy(spec));
  const double contrast = wald_contrast(k, q_by_z, w_pmf, g_star, f_star);
  REQUIRE(std::abs(contrast - 0.296) < 1e-12);  // 1.02 - 0.724
}

TEST_CASE("wald contrast equals the difference of counterfactual means", "[estimators]") {
  CounterRng rng(505, 0);
  for (int rep = 0; rep < 25; ++rep) {
    const NpsemSpec spec = ivtest::random_spec(rng, 0.05);
    const ConditionalKernel k = kernel_of(spec);

    BinaryTarget tg, tf;
    tg.covariate_subset = all_dims(spec.dim());
    tf.covariate_subset = tg.covariate_subset;
    for (std::size_t s = 0; s < spec.n_strata(); ++s) {
      const double g0 = spec.treatment_kernel[s][0], g1 = spec.treatment_kernel[s][1];
      tg.g1[spec.covariate_levels[s]] = g0 + rng.next_u01() * (g1 - g0);
      tf.g1[spec.covariate_levels[s]] = g0 + rng.next_u01() * (g1 - g0);
    }
    const InstrumentPolicy pg = implied_policy_for_target(k, tg);
    const InstrumentPolicy pf = implied_policy_for_target(k, tf);

    StratumTable<std::vector<double>> q_by_z;
    StratumTable<double> w_pmf;
    for (std::size_t s = 0; s < spec.n_strata(); ++s) {
      std::vector<double> q(spec.n_z());
      for (std::size_t zi = 0; zi < spec.n_z(); ++zi) q[zi] = conditional_outcome_mean(spec, s, zi);
      q_by_z[spec.covariate_levels[s]] = q;
      w_pmf[spec.covariate_levels[s]] = spec.covariate_pmf[s];
    }
    const double contrast =
        wald_contrast(k, q_by_z, w_pmf, exact_induced(spec, pg), exact_induced(spec, pf));
    const double oracle = population_truth(spec, pg) - population_truth(spec, pf);
    REQUIRE(std::abs(contrast - oracle) < 1e-10);
  }
}

TEST_CASE("degenerate strata contribute zero to the contrast", "[estimators]") {
  NpsemSpec spec = ivtest::toy_spec();
  spec.treatment_kernel[0] = {0.4, 0.4};  // w=0 stratum cannot be moved
  const ConditionalKernel k = kernel_of(spec);

  BinaryTarget tg, tf;
  tg.covariate_subset = {0};
  tf.covariate_subset = {0};
  tg.g1[{0.0}] = 0.4;
  tf.g1[{0.0}] = 0.4;  // forced to agree by Z-compatibility
  tg.g1[{1.0}] = 0.74;
  tf.g1[{1.0}] = 0.56;
  const InstrumentPolicy nat = natural_policy(spec);
  const InstrumentPolicy pg = implied_policy_for_target(k, tg, &nat);
  const InstrumentPolicy pf = implied_policy_for_target(k, tf, &nat);

  StratumTable<std::vector<double>> q_by_z;
  StratumTable<double> w_pmf;
  for (std::size_t s = 0; s < spec.n_strata(); ++s) {
    std::vector<double> q(spec.n_z());
    for (std::size_t zi = 0; zi < spec.n_z(); ++zi) q[zi] = conditional_outcome_mean(spec, s, zi);
    q_by_z[spec.covariate_levels[s]] = q;
    w_pmf[spec.covariate_levels[s]] = spec.covariate_pmf[s];
  }
  const double contrast =
      wald_contrast(k, q_by_z, w_pmf, exact_induced(spec, pg), exact_induced(spec, pf));
  const double oracle = population_truth(spec, pg) - population_truth(spec, pf);
  REQUIRE(std::abs(contrast - oracle) < 1e-12);

  // Disagreement on the stuck stratum is a modelling error, not a zero.
  InducedMarginal g = exact_induced(spec, pg);
  g.g1[{0.0}] = 0.45;
  REQUIRE_THROWS_AS(wald_contrast(k, q_by_z, w_pmf, g, exact_induced(spec, pf)), ValidationError);
}

TEST_CASE("replication harness is deterministic and thread-invariant", "[estimators][slow]") {
  const NpsemSpec spec = ivtest::toy_spec();
  const InstrumentPolicy star(ivtest::toy_policy());
  Table1Config cfg;
  cfg.n_list = {100, 500};
  cfg.replications = 10;
  cfg.seed = 7;
  cfg.threads = 1;
  const Table1Report rep = replicate_table1(spec, star, cfg);
  REQUIRE(std::abs(rep.truth - 1.02) < 1e-12);
  REQUIRE(rep.rows.size() == 2);
  for (const auto& row : rep.rows) {
    REQUIRE(row.tmle_estimates.size() == 10);
    REQUIRE(row.coverage >= 0.0);
    REQUIRE(row.coverage <= 1.0);
    REQUIRE(row.coverage >= row.coverage2);  // the wider interval never covers less
    REQUIRE(row.mean_se > 0.0);
    REQUIRE(std::abs(row.mean_tmle - 1.02) < 0.25);
  }

  const Table1Report rerun = replicate_table1(spec, star, cfg);
  REQUIRE(rerun.rows[0].tmle_estimates == rep.rows[0].tmle_estimates);
  REQUIRE(rerun.rows[1].plugin_estimates == rep.rows[1].plugin_estimates);

  Table1Config cfg2 = cfg;
  cfg2.threads = 2;
  const Table1Report par = replicate_table1(spec, star, cfg2);
  REQUIRE(par.rows[0].tmle_estimates == rep.rows[0].tmle_estimates);
  REQUIRE(par.rows[1].tmle_estimates == rep.rows[1].tmle_estimates);
}
