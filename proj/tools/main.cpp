// Command-line front end: simulation, estimation, projections, and the
// replication harness. Every artifact embeds {seed, config hash, version}
// and reruns with identical inputs are byte-identical.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "ivpol/estimators.hpp"
#include "ivpol/induced.hpp"
#include "ivpol/io.hpp"
#include "ivpol/kl_projection.hpp"
#include "ivpol/ls_projection.hpp"
#include "ivpol/npsem.hpp"
#include "ivpol/nuisance.hpp"

namespace {

using namespace ivpol;
namespace fs = std::filesystem;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Canonical key=value text whose FNV hash becomes the run's config_hash.
struct CanonConfig {
  std::string text;
  void add(const std::string& key, const std::string& value) { text += key + "=" + value + "\n"; }
  void add(const std::string& key, double value) { add(key, format_double(value)); }
  void add(const std::string& key, std::uint64_t value) { add(key, std::to_string(value)); }
  void add_file(const std::string& key, const std::string& path) { add(key, hex64(fnv1a64(slurp(path)))); }
  RunInfo run(std::uint64_t seed) const {
    RunInfo info;
    info.seed = seed;
    info.config_hash = hex64(fnv1a64(text));
    return info;
  }
};

std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ValidationError("cannot create output directory: " + dir);
}

std::string out_path(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

ordered_json policy_echo(const TabularPolicy& pol) {
  ordered_json cols = ordered_json::array();
  for (std::size_t dim : pol.covariate_subset) cols.push_back(dim + 1);
  ordered_json strata = ordered_json::array();
  for (const auto& [key, row] : pol.pmf) {
    ordered_json w = ordered_json::array();
    for (double v : key) w.push_back(v);
    strata.push_back(ordered_json{{"w", w}, {"pmf", row}});
  }
  return ordered_json{{"covariate_columns", cols}, {"z_support", pol.z_support}, {"strata", strata}};
}

QKind parse_q_kind(const std::string& name) {
  if (name == "hal") return QKind::hal;
  if (name == "ols") return QKind::ols_main_effects;
  if (name == "saturated") return QKind::saturated;
  throw ValidationError("unknown outcome regression kind: " + name);
}

void emit(const ordered_json& j, const std::string& out_file) {
  const std::string text = j.dump(2) + "\n";
  std::cout << text;
  if (!out_file.empty()) detail::write_text(out_file, text);
}

// ---------------------------------------------------------------------------

struct SimulateOpts {
  std::string spec, out = ".";
  std::size_t n = 0;
  std::uint64_t seed = 1;
};

void run_simulate(const SimulateOpts& o) {
  const NpsemSpec spec = read_spec_file(o.spec);
  const std::string canon_spec = serialize_spec(spec);
  CanonConfig cfg;
  cfg.add("command", "simulate");
  cfg.add("spec_hash", hex64(fnv1a64(canon_spec)));
  cfg.add("n", static_cast<std::uint64_t>(o.n));
  cfg.add("seed", o.seed);

  const ObservedDataset data = simulate_natural(spec, o.n, o.seed);
  ensure_dir(o.out);
  const std::string data_path = out_path(o.out, "data.csv");
  write_dataset_csv(data_path, data);

  ordered_json j;
  j["run"] = to_json(cfg.run(o.seed));
  j["command"] = "simulate";
  j["n"] = o.n;
  j["spec_text"] = canon_spec;
  write_json_file(out_path(o.out, "simulate.json"), j);
  std::cout << "wrote " << data_path << " (n=" << o.n << ", seed=" << o.seed << ")\n";
}

// ---------------------------------------------------------------------------

struct TmleOpts {
  std::string data, policy, q_kind = "hal", out;
  double alpha = 0.05;
  bool percent = false;
};

void run_tmle(const TmleOpts& o) {
  CanonConfig cfg;
  cfg.add("command", "tmle");
  cfg.add_file("data_hash", o.data);
  cfg.add_file("policy_hash", o.policy);
  cfg.add("q_kind", o.q_kind);
  cfg.add("alpha", o.alpha);
  cfg.add("percent", std::string(o.percent ? "1" : "0"));

  const ObservedDataset data = read_dataset_csv(o.data);
  const TabularPolicy pol = read_policy_csv(o.policy);
  const InstrumentPolicy policy(pol);

  const OutcomeRegression q = fit_outcome_regression(data, parse_q_kind(o.q_kind));
  const InstrumentDensity h = fit_instrument_density(data);
  const TmleResult res = tmle_estimate(data, q, h, policy, o.alpha);

  // Reduced-route induced marginal: the treatment kernel is fit on the
  // policy's own covariate subset.
  const ConditionalKernel kernel = fit_treatment_kernel(data, KernelKind::tabular, pol.covariate_subset);
  const InducedMarginal marginal = induced_marginal(kernel, policy);

  ordered_json j;
  j["run"] = to_json(cfg.run(0));
  j["command"] = "tmle";
  j["q_kind"] = o.q_kind;
  j["result"] = to_json(res);
  j["policy"] = policy_echo(pol);
  j["induced_marginal"] = marginal_to_json(marginal);
  if (o.percent) {
    char level[32];
    std::snprintf(level, sizeof level, "%.10g%%", (1.0 - o.alpha) * 100.0);
    j["display"] = ordered_json{{"ci_level", level},
                                {"ci", "[" + format_double(res.ci_lo) + ", " + format_double(res.ci_hi) + "]"}};
  }
  emit(j, o.out);
}

// ---------------------------------------------------------------------------

struct ReplicateOpts {
  std::string spec, policy, out = ".", q_kind = "ols";
  std::size_t b = 1000;
  std::vector<std::size_t> n_list{100, 500, 1000, 2000, 10000};
  std::uint64_t seed = 1;
  double alpha = 0.05, alpha2 = 0.10;
  std::size_t threads = 0;
  bool percent = false;
};

void run_replicate(const ReplicateOpts& o) {
  const NpsemSpec spec = read_spec_file(o.spec);
  const TabularPolicy pol = read_policy_csv(o.policy);
  const std::string canon_spec = serialize_spec(spec);

  CanonConfig cfg;
  cfg.add("command", "replicate-table1");
  cfg.add("spec_hash", hex64(fnv1a64(canon_spec)));
  cfg.add_file("policy_hash", o.policy);
  cfg.add("b", static_cast<std::uint64_t>(o.b));
  {
    std::string ns;
    for (std::size_t i = 0; i < o.n_list.size(); ++i) ns += (i ? "," : "") + std::to_string(o.n_list[i]);
    cfg.add("n_list", ns);
  }
  cfg.add("seed", o.seed);
  cfg.add("alpha", o.alpha);
  cfg.add("alpha2", o.alpha2);
  cfg.add("q_kind", o.q_kind);
  cfg.add("percent", std::string(o.percent ? "1" : "0"));

  Table1Config tc;
  tc.n_list = o.n_list;
  tc.replications = o.b;
  tc.seed = o.seed;
  tc.alpha = o.alpha;
  tc.alpha2 = o.alpha2;
  tc.q_kind = parse_q_kind(o.q_kind);
  tc.threads = o.threads;
  const Table1Report report = replicate_table1(spec, InstrumentPolicy(pol), tc);

  ensure_dir(o.out);
  const double cscale = o.percent ? 100.0 : 1.0;
  {
    std::ostringstream table;
    table << "n,mean_tmle,mean_plugin,mean_se,coverage,coverage_alt\n";
    for (const Table1Row& row : report.rows)
      table << row.n << "," << format_double(row.mean_tmle) << "," << format_double(row.mean_plugin) << ","
            << format_double(row.mean_se) << "," << format_double(row.coverage * cscale) << ","
            << format_double(row.coverage2 * cscale) << "\n";
    detail::write_text(out_path(o.out, "table.csv"), table.str());
  }
  for (const Table1Row& row : report.rows) {
    std::ostringstream hist;
    hist << "tmle,plugin\n";
    for (std::size_t r = 0; r < row.tmle_estimates.size(); ++r)
      hist << format_double(row.tmle_estimates[r]) << "," << format_double(row.plugin_estimates[r]) << "\n";
    detail::write_text(out_path(o.out, "hist_n" + std::to_string(row.n) + ".csv"), hist.str());
  }
  ordered_json j;
  j["run"] = to_json(cfg.run(o.seed));
  j["command"] = "replicate-table1";
  j["q_kind"] = o.q_kind;
  j["percent"] = o.percent;
  j["report"] = to_json(report);
  write_json_file(out_path(o.out, "table.json"), j);

  char line[160];
  std::snprintf(line, sizeof line, "truth = %.6f  (B=%zu, seed=%llu)\n", report.truth, o.b,
                static_cast<unsigned long long>(o.seed));
  std::cout << line;
  std::snprintf(line, sizeof line, "%8s %11s %12s %9s %10s %10s\n", "n", "mean_tmle", "mean_plugin", "mean_se",
                "coverage", "cover_alt");
  std::cout << line;
  for (const Table1Row& row : report.rows) {
    std::snprintf(line, sizeof line, "%8zu %11.4f %12.4f %9.4f %10.3f %10.3f\n", row.n, row.mean_tmle,
                  row.mean_plugin, row.mean_se, row.coverage * cscale, row.coverage2 * cscale);
    std::cout << line;
  }
}

// ---------------------------------------------------------------------------

struct KlOpts {
  std::string data, target, out = ".";
  std::uint64_t seed = 1;
  double lambda = -1.0;  // < 0 selects by cross-validation
  std::size_t folds = 5, max_degree = 2, max_knots = 50, max_iter = 200;
  double tol = 1e-6;
  bool gaussian_demo = false;
  std::size_t demo_n = 500, demo_draws = 2000;
  double demo_mu = 1.0, demo_sigma = 0.2;
};

EmConfig em_config(const KlOpts& o) {
  EmConfig cfg;
  cfg.hal.fixed_lambda = o.lambda;
  cfg.hal.n_folds = o.folds;
  cfg.hal.max_degree = o.max_degree;
  cfg.hal.max_knots_per_dim = o.max_knots;
  cfg.tol = o.tol;
  cfg.max_iter = o.max_iter;
  return cfg;
}

void write_kl_trace(const std::string& path, const EmState& state) {
  std::ostringstream out;
  out << "iteration,penalized_loglik\n";
  for (std::size_t t = 0; t < state.loglik_trace.size(); ++t)
    out << t << "," << format_double(state.loglik_trace[t]) << "\n";
  detail::write_text(path, out.str());
}

int run_kl_binary(const KlOpts& o) {
  CanonConfig cfg;
  cfg.add("command", "kl-project");
  cfg.add_file("data_hash", o.data);
  cfg.add_file("target_hash", o.target);
  cfg.add("seed", o.seed);
  cfg.add("lambda", o.lambda);
  cfg.add("folds", static_cast<std::uint64_t>(o.folds));
  cfg.add("max_degree", static_cast<std::uint64_t>(o.max_degree));
  cfg.add("max_knots", static_cast<std::uint64_t>(o.max_knots));
  cfg.add("tol", o.tol);
  cfg.add("max_iter", static_cast<std::uint64_t>(o.max_iter));

  const ObservedDataset data = read_dataset_csv(o.data);
  const BinaryTarget target = read_target_csv(o.target);
  const ConditionalKernel kernel = fit_treatment_kernel(data, KernelKind::tabular);
  const KernelDensity density(BinaryKernelDensity{kernel});
  const EmState state = kl_project(data.w, density, TreatmentTarget(target), o.seed, em_config(o));
  const InstrumentPolicy policy = state.policy();

  ensure_dir(o.out);
  write_kl_trace(out_path(o.out, "kl_trace.csv"), state);
  {
    std::ostringstream out;
    for (std::size_t j = 0; j < data.d(); ++j) out << "w" << (j + 1) << ",";
    out << "h1\n";
    for (const auto& [key, row] : kernel.p1) {
      for (double v : key) out << format_double(v) << ",";
      out << format_double(policy.pmf_at(key)[1]) << "\n";
    }
    detail::write_text(out_path(o.out, "kl_policy.csv"), out.str());
  }

  ordered_json j;
  j["run"] = to_json(cfg.run(o.seed));
  j["command"] = "kl-project";
  j["mode"] = "binary";
  j["lambda"] = state.lambda;
  j["iterations"] = state.iterations;
  j["converged"] = state.converged;
  j["final_loglik"] = state.loglik_trace.back();
  j["induced_marginal"] = marginal_to_json(induced_marginal(kernel, policy));
  write_json_file(out_path(o.out, "kl_result.json"), j);
  std::cout << j.dump(2) << "\n";
  return state.converged ? 0 : 3;
}

int run_kl_demo(const KlOpts& o) {
  CanonConfig cfg;
  cfg.add("command", "kl-project");
  cfg.add("mode", "gaussian-demo");
  cfg.add("n", static_cast<std::uint64_t>(o.demo_n));
  cfg.add("mu", o.demo_mu);
  cfg.add("sigma", o.demo_sigma);
  cfg.add("draws", static_cast<std::uint64_t>(o.demo_draws));
  cfg.add("seed", o.seed);
  cfg.add("lambda", o.lambda);
  cfg.add("folds", static_cast<std::uint64_t>(o.folds));
  cfg.add("max_degree", static_cast<std::uint64_t>(o.max_degree));
  cfg.add("max_knots", static_cast<std::uint64_t>(o.max_knots));
  cfg.add("tol", o.tol);
  cfg.add("max_iter", static_cast<std::uint64_t>(o.max_iter));

  // Uniform covariates on [-2,2]^2; continuous treatment kernel
  // N(2 z + sin(w1) log(1 + w2^2), sigma^2); target N(mu, sigma^2).
  const std::size_t n = o.demo_n;
  Matrix w;
  w.rows = n;
  w.cols = 2;
  w.data.resize(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    CounterRng rng(derive_seed(o.seed, 1, 0), i);
    w.data[2 * i] = -2.0 + 4.0 * rng.next_u01();
    w.data[2 * i + 1] = -2.0 + 4.0 * rng.next_u01();
  }
  GaussianKernelDensity gk;
  gk.gamma = 2.0;
  gk.sigma = o.demo_sigma;
  gk.psi = [](const std::vector<double>& row) { return std::sin(row[0]) * std::log(1.0 + row[1] * row[1]); };
  const KernelDensity kernel(gk);
  GaussianTarget target;
  target.mu = o.demo_mu;
  target.sigma = o.demo_sigma;

  const EmState state = kl_project(w, kernel, TreatmentTarget(target), derive_seed(o.seed, 2, 0), em_config(o));
  const InstrumentPolicy policy = state.policy();

  // Fixed covariate-dependent reference policy for the comparison.
  std::vector<double> h_em(n), h_ref(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<double> row(w.row(i), w.row(i) + 2);
    h_em[i] = policy.pmf_at(row)[1];
    const double s = row[0] * std::sqrt(std::abs(row[1])) * (row[1] >= 0.0 ? 1.0 : -1.0);
    h_ref[i] = expit(s);
  }
  const std::uint64_t mc_seed = derive_seed(o.seed, 3, 0);
  const double kl_em = mc_kl_divergence(target, kernel, h_em, w, o.demo_draws, mc_seed);
  const double kl_ref = mc_kl_divergence(target, kernel, h_ref, w, o.demo_draws, mc_seed);

  ensure_dir(o.out);
  write_kl_trace(out_path(o.out, "kl_trace.csv"), state);
  {
    std::ostringstream out;
    out << "w1,w2,h1\n";
    for (std::size_t i = 0; i < n; ++i)
      out << format_double(w(i, 0)) << "," << format_double(w(i, 1)) << "," << format_double(h_em[i]) << "\n";
    detail::write_text(out_path(o.out, "kl_policy.csv"), out.str());
  }
  {
    // Density overlay samples: target vs the implied densities.
    std::ostringstream out;
    out << "a,target,implied_projected,implied_reference\n";
    for (double a = -2.0; a <= 4.0 + 1e-9; a += 0.02)
      out << format_double(a) << "," << format_double(std::exp(target.log_density(a))) << ","
          << format_double(std::exp(log_implied_density(kernel, h_em, w, a))) << ","
          << format_double(std::exp(log_implied_density(kernel, h_ref, w, a))) << "\n";
    detail::write_text(out_path(o.out, "kl_density.csv"), out.str());
  }

  ordered_json j;
  j["run"] = to_json(cfg.run(o.seed));
  j["command"] = "kl-project";
  j["mode"] = "gaussian-demo";
  j["n"] = n;
  j["mu"] = o.demo_mu;
  j["sigma"] = o.demo_sigma;
  j["lambda"] = state.lambda;
  j["iterations"] = state.iterations;
  j["converged"] = state.converged;
  j["final_loglik"] = state.loglik_trace.back();
  j["kl_projected"] = kl_em;
  j["kl_reference"] = kl_ref;
  j["improved"] = kl_em < kl_ref;
  write_json_file(out_path(o.out, "kl_result.json"), j);
  std::cout << j.dump(2) << "\n";
  return state.converged ? 0 : 3;
}

// ---------------------------------------------------------------------------

struct LsOpts {
  std::string b_matrix, out;
  std::vector<double> g_star, h0, weights;
  double step = 0.1, tol = 1e-9;
  std::size_t max_iter = 100000;
};

int run_ls(const LsOpts& o) {
  CanonConfig cfg;
  cfg.add("command", "ls-project");
  cfg.add_file("b_hash", o.b_matrix);
  cfg.add("g_star", join_doubles(o.g_star));
  cfg.add("h0", join_doubles(o.h0));
  cfg.add("weights", join_doubles(o.weights));
  cfg.add("step", o.step);
  cfg.add("tol", o.tol);
  cfg.add("max_iter", static_cast<std::uint64_t>(o.max_iter));

  const BMatrix b = read_b_matrix_csv(o.b_matrix);
  b.validate();
  PgdConfig pc;
  pc.step = o.step;
  pc.tol = o.tol;
  pc.max_iter = o.max_iter;
  pc.weights = o.weights;
  const std::vector<double>* h0 = o.h0.empty() ? nullptr : &o.h0;
  const PgdState st = ls_project(b, o.g_star, h0, pc);

  ordered_json j;
  j["run"] = to_json(cfg.run(0));
  j["command"] = "ls-project";
  j["h"] = st.h;
  j["risk"] = st.risk;
  j["iterations"] = st.iterations;
  j["converged"] = st.converged;
  j["final_step"] = st.final_step;
  j["implied_marginal"] = implied_marginal(b, st.h);
  j["risk_trace"] = st.risk_trace;
  try {
    const std::vector<double>* wts = o.weights.empty() ? nullptr : &o.weights;
    j["unconstrained"] = unconstrained_solution(b, o.g_star, wts);
  } catch (const ValidationError& e) {
    j["unconstrained"] = ordered_json{{"error", e.what()}};
  }
  emit(j, o.out);
  return st.converged ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"implied-intervention instrument-policy toolkit"};
  app.require_subcommand(1);
  app.set_config("--config", "", "read options from a key=value config file");
  app.allow_config_extras(CLI::config_extras_mode::error);

  SimulateOpts sim;
  CLI::App* c_sim = app.add_subcommand("simulate", "simulate an observed dataset from an NPSEM spec");
  c_sim->add_option("--spec", sim.spec, "NPSEM spec file")->required()->check(CLI::ExistingFile);
  c_sim->add_option("--n", sim.n, "number of rows")->required();
  c_sim->add_option("--seed", sim.seed, "master seed");
  c_sim->add_option("--out", sim.out, "output directory");
  c_sim->callback([&] { run_simulate(sim); });

  TmleOpts tm;
  CLI::App* c_tmle = app.add_subcommand("tmle", "targeted estimation of E[Y] under an instrument policy");
  c_tmle->add_option("--data", tm.data, "dataset CSV")->required()->check(CLI::ExistingFile);
  c_tmle->add_option("--policy", tm.policy, "tabular policy CSV")->required()->check(CLI::ExistingFile);
  c_tmle->add_option("--q-kind", tm.q_kind, "outcome regression: hal|ols|saturated")
      ->check(CLI::IsMember({"hal", "ols", "saturated"}));
  c_tmle->add_option("--alpha", tm.alpha, "two-sided CI level");
  c_tmle->add_flag("--percent", tm.percent, "add percent-formatted display fields");
  c_tmle->add_option("--out", tm.out, "also write the result JSON here");
  c_tmle->callback([&] { run_tmle(tm); });

  ReplicateOpts rep;
  CLI::App* c_rep = app.add_subcommand("replicate-table1", "replication study of TMLE vs plug-in");
  c_rep->add_option("--spec", rep.spec, "NPSEM spec file")->required()->check(CLI::ExistingFile);
  c_rep->add_option("--policy", rep.policy, "tabular policy CSV")->required()->check(CLI::ExistingFile);
  c_rep->add_option("--out", rep.out, "output directory");
  c_rep->add_option("--b", rep.b, "replications per sample size");
  c_rep->add_option("--n-list", rep.n_list, "sample sizes")->delimiter(',');
  c_rep->add_option("--seed", rep.seed, "master seed");
  c_rep->add_option("--alpha", rep.alpha, "primary coverage level");
  c_rep->add_option("--alpha2", rep.alpha2, "companion coverage level");
  c_rep->add_option("--q-kind", rep.q_kind, "outcome regression: hal|ols|saturated")
      ->check(CLI::IsMember({"hal", "ols", "saturated"}));
  c_rep->add_option("--threads", rep.threads, "worker threads (0 = auto)");
  c_rep->add_flag("--percent", rep.percent, "report coverage in percent");
  c_rep->callback([&] { run_replicate(rep); });

  int soft_rc = 0;
  KlOpts kl;
  CLI::App* c_kl = app.add_subcommand("kl-project", "KL projection of a treatment target (EM over a HAL policy)");
  c_kl->add_option("--data", kl.data, "dataset CSV (binary mode)")->check(CLI::ExistingFile);
  c_kl->add_option("--target", kl.target, "binary target CSV (binary mode)")->check(CLI::ExistingFile);
  c_kl->add_flag("--gaussian-demo", kl.gaussian_demo, "run the built-in continuous-treatment demo");
  c_kl->add_option("--out", kl.out, "output directory");
  c_kl->add_option("--seed", kl.seed, "master seed");
  c_kl->add_option("--lambda", kl.lambda, "fixed penalty level (negative = cross-validate)");
  c_kl->add_option("--folds", kl.folds, "CV folds");
  c_kl->add_option("--max-degree", kl.max_degree, "HAL interaction degree");
  c_kl->add_option("--max-knots", kl.max_knots, "HAL knots per dimension");
  c_kl->add_option("--tol", kl.tol, "EM log-likelihood tolerance");
  c_kl->add_option("--max-iter", kl.max_iter, "EM iteration budget");
  c_kl->add_option("--n", kl.demo_n, "demo sample size");
  c_kl->add_option("--mu", kl.demo_mu, "demo target mean");
  c_kl->add_option("--sigma", kl.demo_sigma, "demo kernel/target sd");
  c_kl->add_option("--draws", kl.demo_draws, "demo Monte Carlo draws for the divergence");
  c_kl->callback([&] {
    if (kl.gaussian_demo) {
      soft_rc = run_kl_demo(kl);
    } else {
      if (kl.data.empty() || kl.target.empty())
        throw ValidationError("kl-project: need --data and --target (or --gaussian-demo)");
      soft_rc = run_kl_binary(kl);
    }
  });

  LsOpts ls;
  CLI::App* c_ls = app.add_subcommand("ls-project", "least-squares projection onto the implied-marginal family");
  c_ls->add_option("--b-matrix", ls.b_matrix, "response matrix CSV")->required()->check(CLI::ExistingFile);
  c_ls->add_option("--g-star", ls.g_star, "target marginal")->required()->delimiter(',');
  c_ls->add_option("--h0", ls.h0, "starting policy")->delimiter(',');
  c_ls->add_option("--weights", ls.weights, "risk weights")->delimiter(',');
  c_ls->add_option("--step", ls.step, "initial step size");
  c_ls->add_option("--tol", ls.tol, "max-norm iterate tolerance");
  c_ls->add_option("--max-iter", ls.max_iter, "iteration budget");
  c_ls->add_option("--out", ls.out, "also write the result JSON here");
  c_ls->callback([&] { soft_rc = run_ls(ls); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const PositivityError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const ConvergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const ValidationError& e) {  // covers ParseError
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return soft_rc;
}
