#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "helpers.hpp"
#include "ivpol/nuisance.hpp"

using namespace ivpol;

namespace {

ObservedDataset tiny_dataset() {
  // 6 rows, one covariate; every (z, w) cell except (z=1, w=1) is populated.
  ObservedDataset d;
  d.w = Matrix::from_rows({{0.0}, {0.0}, {0.0}, {0.0}, {1.0}, {1.0}});
  d.z = {0.0, 0.0, 1.0, 1.0, 0.0, 0.0};
  d.a = {0.0, 1.0, 1.0, 1.0, 1.0, 0.0};
  d.y = {0.1, 2.1, 1.9, 2.2, 3.0, 1.2};
  return d;
}

}  // namespace

TEST_CASE("tabular kernel reproduces cell shares and errors on empty cells", "[nuisance]") {
  ObservedDataset d = tiny_dataset();
  REQUIRE_THROWS_AS(fit_treatment_kernel(d, KernelKind::tabular), PositivityError);  // (1,1) empty

  d.z[5] = 1.0;  // populate the missing cell
  const ConditionalKernel k = fit_treatment_kernel(d, KernelKind::tabular);
  REQUIRE(std::abs(k.prob_a1(0, {0.0}) - 0.5) < 1e-15);
  REQUIRE(std::abs(k.prob_a1(1, {0.0}) - 1.0) < 1e-15);
  REQUIRE(std::abs(k.prob_a1(0, {1.0}) - 1.0) < 1e-15);
  REQUIRE(std::abs(k.prob_a1(1, {1.0}) - 0.0) < 1e-15);
}

TEST_CASE("tabular kernel converges to the spec kernel", "[nuisance]") {
  const NpsemSpec spec = ivtest::toy_spec();
  const ObservedDataset d = simulate_natural(spec, 40000, 3);
  const ConditionalKernel k = fit_treatment_kernel(d, KernelKind::tabular);
  for (std::size_t s = 0; s < spec.n_strata(); ++s)
    for (std::size_t zi = 0; zi < 2; ++zi)
      REQUIRE(std::abs(k.prob_a1(zi, spec.covariate_levels[s]) - spec.treatment_kernel[s][zi]) < 0.02);
}

TEST_CASE("kernel validation rejects non-binary treatments", "[nuisance]") {
  ObservedDataset d = tiny_dataset();
  d.a[0] = 2.0;
  REQUIRE_THROWS_AS(fit_treatment_kernel(d, KernelKind::tabular), ValidationError);
}

TEST_CASE("ols main-effects regression solves exactly on a noiseless linear outcome", "[nuisance]") {
  ObservedDataset d;
  d.w = Matrix::from_rows({{0.0, 1.0}, {1.0, 0.0}, {1.0, 1.0}, {0.0, 0.0}, {2.0, 1.0}, {0.5, 2.0}});
  d.z = {0.0, 1.0, 0.0, 1.0, 1.0, 0.0};
  d.a = {0.0, 1.0, 0.0, 1.0, 1.0, 0.0};
  d.y.resize(6);
  for (std::size_t i = 0; i < 6; ++i) d.y[i] = 2.0 + 3.0 * d.z[i] - 1.0 * d.w(i, 0) + 0.5 * d.w(i, 1);
  const OutcomeRegression q = fit_outcome_regression(d, QKind::ols_main_effects);
  REQUIRE(std::abs(q.ols_coef[0] - 2.0) < 1e-10);
  REQUIRE(std::abs(q.ols_coef[1] - 3.0) < 1e-10);
  REQUIRE(std::abs(q.ols_coef[2] + 1.0) < 1e-10);
  REQUIRE(std::abs(q.ols_coef[3] - 0.5) < 1e-10);
  REQUIRE(std::abs(q.predict(1, {2.0, 1.0}) - (2.0 + 3.0 - 2.0 + 0.5)) < 1e-10);
  REQUIRE(q.y_min == *std::min_element(d.y.begin(), d.y.end()));
  REQUIRE(q.y_max == *std::max_element(d.y.begin(), d.y.end()));
}

TEST_CASE("collinear design is reported", "[nuisance]") {
  ObservedDataset d = tiny_dataset();
  for (std::size_t i = 0; i < d.n(); ++i) d.w(i, 0) = d.z[i];  // w duplicates z
  REQUIRE_THROWS_WITH(fit_outcome_regression(d, QKind::ols_main_effects),
                      Catch::Matchers::ContainsSubstring("collinear"));
}

TEST_CASE("saturated regression returns cell means and rejects unseen cells", "[nuisance]") {
  const ObservedDataset d = tiny_dataset();
  const OutcomeRegression q = fit_outcome_regression(d, QKind::saturated);
  REQUIRE(std::abs(q.predict(0, {0.0}) - 1.1) < 1e-15);    // mean of {0.1, 2.1}
  REQUIRE(std::abs(q.predict(1, {0.0}) - 2.05) < 1e-15);   // mean of {1.9, 2.2}
  REQUIRE(std::abs(q.predict(0, {1.0}) - 2.1) < 1e-15);    // mean of {3.0, 1.2}
  REQUIRE_THROWS_AS(q.predict(1, {1.0}), ValidationError);  // never observed
}

TEST_CASE("hal outcome regression tracks the toy means", "[nuisance]") {
  const NpsemSpec spec = ivtest::toy_spec();
  const ObservedDataset d = simulate_natural(spec, 2000, 13);
  HalConfig cfg;
  cfg.fixed_lambda = 1e-4;
  const OutcomeRegression q = fit_outcome_regression(d, QKind::hal, cfg);
  // Discrete (z,w) cells are separable, so HAL lands near the cell means.
  REQUIRE(std::abs(q.predict(0, {0.0}) - 0.1) < 0.1);
  REQUIRE(std::abs(q.predict(1, {0.0}) - 0.9) < 0.1);
  REQUIRE(std::abs(q.predict(0, {1.0}) - 2.1) < 0.1);
  REQUIRE(std::abs(q.predict(1, {1.0}) - 1.5) < 0.1);
}

TEST_CASE("instrument density matches empirical shares and sums to one", "[nuisance]") {
  const NpsemSpec spec = ivtest::toy_spec();
  const ObservedDataset d = simulate_natural(spec, 20000, 7);
  const InstrumentDensity h = fit_instrument_density(d);
  for (const auto& [key, row] : h.pmf) {
    double sum = 0.0;
    for (double p : row) sum += p;
    REQUIRE(std::abs(sum - 1.0) < 1e-12);
  }
  REQUIRE(std::abs(h.prob(1, {0.0}) - 0.3) < 0.02);
  REQUIRE(std::abs(h.prob(1, {1.0}) - 0.8) < 0.02);
  REQUIRE_THROWS_AS(h.prob(0, {5.0}), ValidationError);
}

TEST_CASE("covariate subsets project the strata", "[nuisance]") {
  const NpsemSpec spec = ivtest::toy_spec();
  const ObservedDataset d = simulate_natural(spec, 5000, 19);
  const ConditionalKernel pooled = fit_treatment_kernel(d, KernelKind::tabular, {});
  const ConditionalKernel empty_subset = [&] {
    ConditionalKernel k = fit_treatment_kernel(d, KernelKind::tabular);
    return k;
  }();
  REQUIRE(pooled.covariate_subset == std::vector<std::size_t>{0});  // {} defaults to all dims
  REQUIRE(empty_subset.p1.size() == 2);
}
