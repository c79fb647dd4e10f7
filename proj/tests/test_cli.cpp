// End-to-end checks of the command-line front end: exit codes, artifact
// layout, rerun determinism, and numeric sanity of each subcommand. The
// binary path and config directory arrive as compile definitions.

#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>

#include "helpers.hpp"
#include "ivpol/io.hpp"
#include "ivpol/nuisance.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Scratch {
  fs::path dir;
  Scratch() {
    dir = fs::temp_directory_path() / ("ivpol_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void spit(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

std::string config(const std::string& name) { return (fs::path(IVPOL_CONFIG_DIR) / name).string(); }

// Runs the CLI with stdout/stderr captured to files; returns the exit code.
int run_cli(const Scratch& s, const std::string& args) {
  const std::string cmd = std::string(IVPOL_BIN) + " " + args + " > " + s.path("stdout.txt") + " 2> " +
                          s.path("stderr.txt");
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  REQUIRE(WIFEXITED(rc));
  return WEXITSTATUS(rc);
}

std::size_t line_count(const std::string& text) {
  std::size_t n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("simulate writes a dataset and a sidecar, byte-identical on rerun") {
  Scratch s;
  const std::string args =
      "simulate --spec " + config("toy.spec") + " --n 100 --seed 7 --out ";
  REQUIRE(run_cli(s, args + s.path("run1")) == 0);
  REQUIRE(run_cli(s, args + s.path("run2")) == 0);

  const std::string csv = slurp(s.path("run1") + "/data.csv");
  REQUIRE(csv == slurp(s.path("run2") + "/data.csv"));
  REQUIRE(line_count(csv) == 101);  // header + n rows
  REQUIRE(csv.substr(0, 9) == "w1,z,a,y\n");

  const json j = json::parse(slurp(s.path("run1") + "/simulate.json"));
  REQUIRE(j["run"]["seed"].get<std::uint64_t>() == 7);
  REQUIRE(j["run"]["version"].get<std::string>() == ivpol::kVersion);
  REQUIRE(j["run"]["config_hash"].get<std::string>().size() == 16);
  REQUIRE(j["n"].get<std::size_t>() == 100);
  // The sidecar echoes the canonical spec text.
  REQUIRE(j["spec_text"].get<std::string>() == slurp(config("toy.spec")));
  REQUIRE(j["spec_text"].get<std::string>() ==
          ivpol::serialize_spec(ivtest::toy_spec()));

  // A different seed changes the data but not the schema.
  REQUIRE(run_cli(s, "simulate --spec " + config("toy.spec") + " --n 100 --seed 8 --out " + s.path("run3")) == 0);
  REQUIRE(slurp(s.path("run3") + "/data.csv") != csv);
}

TEST_CASE("argument and input validation exits with code 2") {
  Scratch s;
  // Unknown flag, missing subcommand, unknown subcommand.
  REQUIRE(run_cli(s, "simulate --spec " + config("toy.spec") + " --n 10 --bogus") == 2);
  REQUIRE(run_cli(s, "") == 2);
  REQUIRE(run_cli(s, "frobnicate") == 2);
  // --help is a clean exit.
  REQUIRE(run_cli(s, "--help") == 0);

  // Malformed spec: pmf does not sum to one.
  spit(s.path("bad.spec"),
       "covariate_levels = [[0],[1]]\ncovariate_pmf = [0.7,0.7]\nz_support = [0,1]\n"
       "instrument_policy = [[0.7,0.3],[0.2,0.8]]\ntreatment_kernel = [[0.3,0.7],[0.8,0.5]]\n"
       "outcome_alpha = 2\noutcome_gamma = [1]\noutcome_delta = -1\noutcome_noise_sd = 0.05\n"
       "outcome_mode = additive\n");
  REQUIRE(run_cli(s, "simulate --spec " + s.path("bad.spec") + " --n 10 --out " + s.path("bad")) == 2);

  // Config file with an unknown key is rejected, not ignored.
  spit(s.path("extra.cfg"), "bogus=1\n");
  REQUIRE(run_cli(s, "--config " + s.path("extra.cfg") + " simulate --spec " + config("toy.spec") +
                         " --n 10 --out " + s.path("cfg")) == 2);

  // Malformed B matrix: non-numeric cell, coordinates reported.
  spit(s.path("bad_b.csv"), "0.5,0.7\n0.5,oops\n");
  REQUIRE(run_cli(s, "ls-project --b-matrix " + s.path("bad_b.csv") + " --g-star 0.4,0.6") == 2);
  REQUIRE(slurp(s.path("stderr.txt")).find("row 2") != std::string::npos);
}

TEST_CASE("tmle subcommand recovers the toy policy value") {
  Scratch s;
  REQUIRE(run_cli(s, "simulate --spec " + config("toy.spec") + " --n 10000 --seed 21 --out " + s.path("sim")) == 0);
  const std::string data = s.path("sim") + "/data.csv";

  REQUIRE(run_cli(s, "tmle --data " + data + " --policy " + config("policy_toy.csv") +
                         " --q-kind saturated --out " + s.path("tmle.json")) == 0);
  const json j = json::parse(slurp(s.path("tmle.json")));
  REQUIRE(j["command"].get<std::string>() == "tmle");
  const double psi = j["result"]["psi"].get<double>();
  const double se = j["result"]["se"].get<double>();
  REQUIRE(j["result"]["converged"].get<bool>());
  REQUIRE(se > 0.0);
  REQUIRE(std::abs(psi - 1.02) < 5.0 * se);
  REQUIRE(std::abs(psi - 1.02) < 0.1);
  // Saturated outcome model: the targeting step is a no-op.
  REQUIRE(j["result"]["epsilon"].get<double>() == 0.0);
  REQUIRE(j["result"]["ci"][0].get<double>() <= psi);
  REQUIRE(j["result"]["ci"][1].get<double>() >= psi);
  // Policy echo and induced marginal ride along.
  REQUIRE(j["policy"]["covariate_columns"][0].get<int>() == 1);
  REQUIRE(j["induced_marginal"]["strata"].size() == 2);
  for (const auto& st : j["induced_marginal"]["strata"]) {
    const double g1 = st["g1"].get<double>();
    REQUIRE(g1 > 0.0);
    REQUIRE(g1 < 1.0);
  }

  // stdout mirrors the JSON; --percent adds a display block.
  REQUIRE(run_cli(s, "tmle --data " + data + " --policy " + config("policy_toy.csv") +
                         " --q-kind saturated --percent") == 0);
  const std::string out = slurp(s.path("stdout.txt"));
  REQUIRE(out.find("\"display\"") != std::string::npos);
  REQUIRE(out.find("95%") != std::string::npos);
}

TEST_CASE("tmle at the empirical natural policy returns the sample mean") {
  Scratch s;
  REQUIRE(run_cli(s, "simulate --spec " + config("toy.spec") + " --n 4000 --seed 33 --out " + s.path("sim")) == 0);
  const ivpol::ObservedDataset data = ivpol::read_dataset_csv(s.path("sim") + "/data.csv");
  double ybar = 0.0;
  for (double y : data.y) ybar += y;
  ybar /= static_cast<double>(data.n());

  // Write the empirical instrument density as a tabular policy; shares are
  // dyadic-free rationals but format_double round-trips them exactly.
  const ivpol::InstrumentDensity h = ivpol::fit_instrument_density(data);
  ivpol::TabularPolicy pol;
  pol.covariate_subset = h.covariate_subset;
  pol.z_support = h.z_support;
  pol.pmf = h.pmf;
  ivpol::write_policy_csv(s.path("natural.csv"), pol);

  REQUIRE(run_cli(s, "tmle --data " + s.path("sim") + "/data.csv --policy " + s.path("natural.csv") +
                         " --q-kind saturated --out " + s.path("nat.json")) == 0);
  const json j = json::parse(slurp(s.path("nat.json")));
  REQUIRE_THAT(j["result"]["psi"].get<double>(), Catch::Matchers::WithinAbs(ybar, 1e-8));
}

TEST_CASE("tmle exits 4 when the policy demands an unobserved instrument level") {
  Scratch s;
  // Stratum w=1 is never assigned z=1, so the induced-marginal kernel has an
  // empty cell exactly where the toy policy puts mass.
  std::ostringstream csv;
  csv << "w1,z,a,y\n";
  for (int i = 0; i < 6; ++i) csv << "0," << (i % 2) << "," << (i % 2) << "," << (0.1 * i) << "\n";
  for (int i = 0; i < 6; ++i) csv << "1,0," << (i % 2) << "," << (0.2 * i) << "\n";
  spit(s.path("partial.csv"), csv.str());
  REQUIRE(run_cli(s, "tmle --data " + s.path("partial.csv") + " --policy " + config("policy_toy.csv") +
                         " --q-kind ols") == 4);
  REQUIRE(slurp(s.path("stderr.txt")).find("error:") != std::string::npos);
}

TEST_CASE("null policy on the synthetic lottery yields an all-zero induced marginal") {
  Scratch s;
  REQUIRE(run_cli(s, "simulate --spec " + config("lottery_synth.spec") + " --n 4000 --seed 5 --out " +
                         s.path("sim")) == 0);
  // One-sided design: A = 0 whenever z = 0, so forcing z = 0 forces the
  // induced treatment probability to zero in every stratum.
  REQUIRE(run_cli(s, "tmle --data " + s.path("sim") + "/data.csv --policy " + config("policy_null.csv") +
                         " --q-kind ols --out " + s.path("null.json")) == 0);
  const json j = json::parse(slurp(s.path("null.json")));
  REQUIRE(j["induced_marginal"]["strata"].size() == 2);
  for (const auto& st : j["induced_marginal"]["strata"]) REQUIRE(st["g1"].get<double>() == 0.0);
}

TEST_CASE("replicate-table1 writes table, histograms, and JSON deterministically") {
  Scratch s;
  const std::string args = "replicate-table1 --spec " + config("toy.spec") + " --policy " +
                           config("policy_toy.csv") + " --b 3 --n-list 60,120 --seed 9 --q-kind ols --out ";
  REQUIRE(run_cli(s, args + s.path("r1")) == 0);
  REQUIRE(run_cli(s, args + s.path("r2")) == 0);

  const std::string table = slurp(s.path("r1") + "/table.csv");
  REQUIRE(table == slurp(s.path("r2") + "/table.csv"));
  const std::string header = "n,mean_tmle,mean_plugin,mean_se,coverage,coverage_alt\n";
  REQUIRE(table.substr(0, header.size()) == header);
  REQUIRE(line_count(table) == 3);
  REQUIRE(slurp(s.path("r1") + "/table.json") == slurp(s.path("r2") + "/table.json"));
  REQUIRE(line_count(slurp(s.path("r1") + "/hist_n60.csv")) == 4);   // header + B rows
  REQUIRE(line_count(slurp(s.path("r1") + "/hist_n120.csv")) == 4);

  const json j = json::parse(slurp(s.path("r1") + "/table.json"));
  REQUIRE_THAT(j["report"]["truth"].get<double>(), Catch::Matchers::WithinAbs(1.02, 1e-12));
  REQUIRE(j["report"]["rows"].size() == 2);
  for (const auto& row : j["report"]["rows"]) {
    REQUIRE(row["coverage"].get<double>() >= 0.0);
    REQUIRE(row["coverage"].get<double>() <= 1.0);
  }

  // Percent mode scales the coverage columns in the CSV.
  REQUIRE(run_cli(s, args + s.path("r3") + " --percent") == 0);
  const json jp = json::parse(slurp(s.path("r3") + "/table.json"));
  // JSON report keeps raw proportions regardless of display mode.
  REQUIRE(jp["report"]["rows"][0]["coverage"].get<double>() <= 1.0);
  std::istringstream lines(slurp(s.path("r3") + "/table.csv"));
  std::string line;
  std::getline(lines, line);
  std::getline(lines, line);
  const double cov = std::stod(line.substr(line.find_last_of(',') + 1));
  const bool percent_scaled = cov == 0.0 || cov >= 100.0 / 3.0 - 1e-9;
  REQUIRE(percent_scaled);
}

TEST_CASE("kl-project on tabular data recovers the attainable target") {
  Scratch s;
  REQUIRE(run_cli(s, "simulate --spec " + config("toy.spec") + " --n 2000 --seed 40 --out " + s.path("sim")) == 0);
  REQUIRE(run_cli(s, "kl-project --data " + s.path("sim") + "/data.csv --target " + config("target_toy.csv") +
                         " --lambda 0 --seed 12 --out " + s.path("kl")) == 0);

  const json j = json::parse(slurp(s.path("kl") + "/kl_result.json"));
  REQUIRE(j["mode"].get<std::string>() == "binary");
  REQUIRE(j["converged"].get<bool>());
  REQUIRE(j["iterations"].get<int>() >= 1);
  // The induced marginal under the projected policy approaches the target.
  for (const auto& st : j["induced_marginal"]["strata"]) {
    const double w = st["w"][0].get<double>();
    const double want = w == 0.0 ? 0.58 : 0.68;
    REQUIRE_THAT(st["g1"].get<double>(), Catch::Matchers::WithinAbs(want, 0.08));
  }

  const std::string trace = slurp(s.path("kl") + "/kl_trace.csv");
  REQUIRE(trace.substr(0, 27) == "iteration,penalized_loglik\n");
  REQUIRE(line_count(trace) >= 3);  // header + initial value + >=1 EM step
  const std::string policy = slurp(s.path("kl") + "/kl_policy.csv");
  REQUIRE(policy.substr(0, 6) == "w1,h1\n");
  REQUIRE(line_count(policy) == 3);

  // Missing inputs in tabular mode are a validation error.
  REQUIRE(run_cli(s, "kl-project --data " + s.path("sim") + "/data.csv") == 2);
}

TEST_CASE("kl-project gaussian demo runs end to end and is deterministic") {
  Scratch s;
  const std::string args =
      "kl-project --gaussian-demo --n 80 --draws 200 --lambda 0.001 --max-knots 5 --seed 3 --out ";
  const int rc1 = run_cli(s, args + s.path("d1"));
  REQUIRE((rc1 == 0 || rc1 == 3));  // small-n demo may hit the iteration cap
  REQUIRE(run_cli(s, args + s.path("d2")) == rc1);
  REQUIRE(slurp(s.path("d1") + "/kl_policy.csv") == slurp(s.path("d2") + "/kl_policy.csv"));
  REQUIRE(slurp(s.path("d1") + "/kl_result.json") == slurp(s.path("d2") + "/kl_result.json"));

  const json j = json::parse(slurp(s.path("d1") + "/kl_result.json"));
  REQUIRE(j["mode"].get<std::string>() == "gaussian-demo");
  REQUIRE(std::isfinite(j["kl_projected"].get<double>()));
  REQUIRE(std::isfinite(j["kl_reference"].get<double>()));
  REQUIRE(j["converged"].is_boolean());
  // Density grid: a in [-2, 4] step 0.02 -> 301 samples.
  REQUIRE(line_count(slurp(s.path("d1") + "/kl_density.csv")) == 302);
  REQUIRE(line_count(slurp(s.path("d1") + "/kl_policy.csv")) == 81);
}

TEST_CASE("ls-project solves the binary demo and flags truncation with exit 3") {
  Scratch s;
  REQUIRE(run_cli(s, "ls-project --b-matrix " + config("b_matrix_demo.csv") +
                         " --g-star 0.4,0.6 --out " + s.path("ls.json")) == 0);
  const json j = json::parse(slurp(s.path("ls.json")));
  REQUIRE(j["converged"].get<bool>());
  REQUIRE_THAT(j["h"][0].get<double>(), Catch::Matchers::WithinAbs(1.0, 1e-6));
  REQUIRE_THAT(j["h"][1].get<double>(), Catch::Matchers::WithinAbs(0.0, 1e-6));
  REQUIRE_THAT(j["implied_marginal"][0].get<double>(), Catch::Matchers::WithinAbs(0.5, 1e-9));
  REQUIRE_THAT(j["implied_marginal"][1].get<double>(), Catch::Matchers::WithinAbs(0.5, 1e-9));
  // The unconstrained solution leaves the simplex: (1.5, -0.5).
  REQUIRE_THAT(j["unconstrained"][0].get<double>(), Catch::Matchers::WithinAbs(1.5, 1e-9));
  REQUIRE_THAT(j["unconstrained"][1].get<double>(), Catch::Matchers::WithinAbs(-0.5, 1e-9));
  REQUIRE(j["risk_trace"].size() == static_cast<std::size_t>(j["iterations"].get<int>()) + 1);

  // Starved iteration budget: artifacts still written, soft exit 3.
  REQUIRE(run_cli(s, "ls-project --b-matrix " + config("b_matrix_demo.csv") +
                         " --g-star 0.4,0.6 --max-iter 1 --out " + s.path("ls_trunc.json")) == 3);
  const json jt = json::parse(slurp(s.path("ls_trunc.json")));
  REQUIRE_FALSE(jt["converged"].get<bool>());
  REQUIRE(jt["iterations"].get<int>() >= 1);
}
