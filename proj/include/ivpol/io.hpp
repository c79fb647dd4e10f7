#pragma once

// File formats: CSV for datasets / tabular policies / targets / B matrices,
// a line-oriented key = value config for NPSEM specs (bracketed nested
// arrays, # comments), and JSON result emission. All numerics are written
// with shortest round-trip formatting and parsed strictly, so
// write -> read -> write is byte-stable.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "ivpol/common.hpp"
#include "ivpol/estimators.hpp"
#include "ivpol/induced.hpp"
#include "ivpol/npsem.hpp"
#include "ivpol/policy.hpp"

namespace ivpol {

using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// numeric formatting

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view token, const std::string& where) {
  double v = 0.0;
  const char* first = token.data();
  const char* last = token.data() + token.size();
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last)
    throw ParseError(where + ": cannot parse number from '" + std::string(token) + "'");
  return v;
}

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(trim(std::string_view(line).substr(start)));
      break;
    }
    out.push_back(trim(std::string_view(line).substr(start, comma - start)));
    start = comma + 1;
  }
  return out;
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open file: " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ValidationError("cannot open file for writing: " + path);
  out << text;
  if (!out) throw ValidationError("write failed: " + path);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// dataset CSV: header w1..wd,z,a,y (z omitted when the dataset has no
// instrument column, as in the policy-independent counterfactual world)

inline std::string dataset_to_csv(const Matrix& w, const std::vector<double>* z, const std::vector<double>& a,
                                  const std::vector<double>& y) {
  std::ostringstream out;
  for (std::size_t j = 0; j < w.cols; ++j) out << "w" << (j + 1) << ",";
  if (z != nullptr) out << "z,";
  out << "a,y\n";
  for (std::size_t i = 0; i < w.rows; ++i) {
    for (std::size_t j = 0; j < w.cols; ++j) out << format_double(w(i, j)) << ",";
    if (z != nullptr) out << format_double((*z)[i]) << ",";
    out << format_double(a[i]) << "," << format_double(y[i]) << "\n";
  }
  return out.str();
}

inline void write_dataset_csv(const std::string& path, const ObservedDataset& data) {
  detail::write_text(path, dataset_to_csv(data.w, &data.z, data.a, data.y));
}

inline void write_dataset_csv(const std::string& path, const CounterfactualDataset& data) {
  const std::vector<double>* z = data.z.empty() ? nullptr : &data.z;
  detail::write_text(path, dataset_to_csv(data.w, z, data.a, data.y));
}

inline ObservedDataset read_dataset_csv(const std::string& path) {
  const std::vector<std::string> lines = detail::read_lines(path);
  if (lines.empty()) throw ParseError(path + ": empty file");
  const std::vector<std::string> header = detail::split_csv_line(lines[0]);
  std::size_t d = 0;
  while (d < header.size() && header[d] == "w" + std::to_string(d + 1)) ++d;
  if (d == 0 || header.size() != d + 3 || header[d] != "z" || header[d + 1] != "a" || header[d + 2] != "y")
    throw ParseError(path + ": expected header w1..wd,z,a,y");

  ObservedDataset data;
  data.w.cols = d;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].empty() && li + 1 == lines.size()) break;
    const std::vector<std::string> cells = detail::split_csv_line(lines[li]);
    const std::string where = path + ": line " + std::to_string(li + 1);
    if (cells.size() != d + 3) throw ParseError(where + ": expected " + std::to_string(d + 3) + " cells");
    for (std::size_t j = 0; j < d; ++j) data.w.data.push_back(parse_double(cells[j], where));
    data.z.push_back(parse_double(cells[d], where));
    data.a.push_back(parse_double(cells[d + 1], where));
    data.y.push_back(parse_double(cells[d + 2], where));
    ++data.w.rows;
  }
  data.validate();
  return data;
}

// ---------------------------------------------------------------------------
// tabular policy CSV: header names the covariate columns it conditions on
// (w3,...), then z, then p; one row per (stratum, z) pair

namespace detail {

// Parses "w<k>" (1-based) column names into 0-based dims, strictly increasing.
inline std::vector<std::size_t> parse_w_columns(const std::vector<std::string>& header, std::size_t n_tail,
                                                const std::string& where) {
  if (header.size() < n_tail + 1) throw ParseError(where + ": too few columns");
  std::vector<std::size_t> dims;
  for (std::size_t j = 0; j + n_tail < header.size(); ++j) {
    const std::string& name = header[j];
    if (name.size() < 2 || name[0] != 'w') throw ParseError(where + ": expected covariate column, got '" + name + "'");
    std::size_t k = 0;
    const auto res = std::from_chars(name.data() + 1, name.data() + name.size(), k);
    if (res.ec != std::errc() || res.ptr != name.data() + name.size() || k == 0)
      throw ParseError(where + ": bad covariate column name '" + name + "'");
    if (!dims.empty() && k - 1 <= dims.back())
      throw ParseError(where + ": covariate columns must be strictly increasing");
    dims.push_back(k - 1);
  }
  return dims;
}

}  // namespace detail

inline TabularPolicy read_policy_csv(const std::string& path) {
  const std::vector<std::string> lines = detail::read_lines(path);
  if (lines.empty()) throw ParseError(path + ": empty file");
  const std::vector<std::string> header = detail::split_csv_line(lines[0]);
  const std::vector<std::size_t> dims = detail::parse_w_columns(header, 2, path + ": header");
  if (header[dims.size()] != "z" || header[dims.size() + 1] != "p")
    throw ParseError(path + ": header must end with z,p");

  std::map<StratumKey, std::map<double, double>> cells;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].empty() && li + 1 == lines.size()) break;
    const std::vector<std::string> c = detail::split_csv_line(lines[li]);
    const std::string where = path + ": line " + std::to_string(li + 1);
    if (c.size() != dims.size() + 2) throw ParseError(where + ": expected " + std::to_string(dims.size() + 2) + " cells");
    StratumKey key(dims.size());
    for (std::size_t j = 0; j < dims.size(); ++j) key[j] = parse_double(c[j], where);
    const double z = parse_double(c[dims.size()], where);
    const double p = parse_double(c[dims.size() + 1], where);
    if (!cells[key].emplace(z, p).second) throw ParseError(where + ": duplicate (stratum, z) row");
  }
  if (cells.empty()) throw ParseError(path + ": no policy rows");

  std::set<double> z_set;
  for (const auto& [key, m] : cells)
    for (const auto& [z, p] : m) z_set.insert(z);
  TabularPolicy pol;
  pol.covariate_subset = dims;
  pol.z_support.assign(z_set.begin(), z_set.end());
  for (const auto& [key, m] : cells) {
    if (m.size() != pol.z_support.size())
      throw ParseError(path + ": stratum " + key_to_string(key) + " does not cover every z value");
    std::vector<double> row;
    for (double z : pol.z_support) row.push_back(m.at(z));
    pol.pmf[key] = std::move(row);
  }
  pol.validate();
  return pol;
}

inline std::string policy_to_csv(const std::vector<std::size_t>& dims, const std::vector<double>& z_support,
                                 const StratumTable<std::vector<double>>& pmf) {
  std::ostringstream out;
  for (std::size_t dim : dims) out << "w" << (dim + 1) << ",";
  out << "z,p\n";
  for (const auto& [key, row] : pmf)
    for (std::size_t zi = 0; zi < z_support.size(); ++zi) {
      for (double v : key) out << format_double(v) << ",";
      out << format_double(z_support[zi]) << "," << format_double(row[zi]) << "\n";
    }
  return out.str();
}

inline void write_policy_csv(const std::string& path, const TabularPolicy& pol) {
  detail::write_text(path, policy_to_csv(pol.covariate_subset, pol.z_support, pol.pmf));
}

// ---------------------------------------------------------------------------
// binary treatment target CSV: header w...,g1

inline BinaryTarget read_target_csv(const std::string& path) {
  const std::vector<std::string> lines = detail::read_lines(path);
  if (lines.empty()) throw ParseError(path + ": empty file");
  const std::vector<std::string> header = detail::split_csv_line(lines[0]);
  const std::vector<std::size_t> dims = detail::parse_w_columns(header, 1, path + ": header");
  if (header[dims.size()] != "g1") throw ParseError(path + ": header must end with g1");

  BinaryTarget target;
  target.covariate_subset = dims;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].empty() && li + 1 == lines.size()) break;
    const std::vector<std::string> c = detail::split_csv_line(lines[li]);
    const std::string where = path + ": line " + std::to_string(li + 1);
    if (c.size() != dims.size() + 1) throw ParseError(where + ": expected " + std::to_string(dims.size() + 1) + " cells");
    StratumKey key(dims.size());
    for (std::size_t j = 0; j < dims.size(); ++j) key[j] = parse_double(c[j], where);
    if (!target.g1.emplace(key, parse_double(c[dims.size()], where)).second)
      throw ParseError(where + ": duplicate stratum");
  }
  target.validate();
  return target;
}

inline void write_target_csv(const std::string& path, const BinaryTarget& target) {
  std::ostringstream out;
  for (std::size_t dim : target.covariate_subset) out << "w" << (dim + 1) << ",";
  out << "g1\n";
  for (const auto& [key, g] : target.g1) {
    for (double v : key) out << format_double(v) << ",";
    out << format_double(g) << "\n";
  }
  detail::write_text(path, out.str());
}

// ---------------------------------------------------------------------------
// B matrix CSV: plain numeric rows, no header

inline BMatrix read_b_matrix_csv(const std::string& path) {
  const std::vector<std::string> lines = detail::read_lines(path);
  BMatrix b;
  for (std::size_t li = 0; li < lines.size(); ++li) {
    if (lines[li].empty() && li + 1 == lines.size()) break;
    const std::vector<std::string> cells = detail::split_csv_line(lines[li]);
    if (b.n_a == 0) b.n_z = cells.size();
    if (cells.size() != b.n_z)
      throw ParseError(path + ": row " + std::to_string(li + 1) + " has " + std::to_string(cells.size()) +
                       " cells, expected " + std::to_string(b.n_z));
    for (std::size_t j = 0; j < cells.size(); ++j)
      b.entries.push_back(parse_double(
          cells[j], path + ": row " + std::to_string(li + 1) + ", column " + std::to_string(j + 1)));
    ++b.n_a;
  }
  if (b.n_a == 0) throw ParseError(path + ": empty matrix");
  return b;
}

inline void write_b_matrix_csv(const std::string& path, const BMatrix& b) {
  std::ostringstream out;
  for (std::size_t a = 0; a < b.n_a; ++a) {
    for (std::size_t z = 0; z < b.n_z; ++z) out << (z ? "," : "") << format_double(b.at(a, z));
    out << "\n";
  }
  detail::write_text(path, out.str());
}

// ---------------------------------------------------------------------------
// NPSEM spec config: line-oriented `key = value`, values either scalars,
// identifiers, or bracketed arrays nested one level ([[...],[...]]).

namespace detail {

struct ConfigValue {
  enum class Kind { number, ident, list } kind = Kind::number;
  double num = 0.0;
  std::string ident;
  std::vector<ConfigValue> items;
};

// Recursive-descent value parser over one logical line.
inline ConfigValue parse_config_value(std::string_view s, std::size_t& pos, const std::string& where) {
  const auto skip_ws = [&]() {
    while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t')) ++pos;
  };
  skip_ws();
  if (pos >= s.size()) throw ParseError(where + ": missing value");
  if (s[pos] == '[') {
    ++pos;
    ConfigValue v;
    v.kind = ConfigValue::Kind::list;
    skip_ws();
    if (pos < s.size() && s[pos] == ']') {
      ++pos;
      return v;
    }
    while (true) {
      v.items.push_back(parse_config_value(s, pos, where));
      skip_ws();
      if (pos >= s.size()) throw ParseError(where + ": unterminated '['");
      if (s[pos] == ',') {
        ++pos;
        continue;
      }
      if (s[pos] == ']') {
        ++pos;
        return v;
      }
      throw ParseError(where + ": expected ',' or ']' at position " + std::to_string(pos + 1));
    }
  }
  std::size_t end = pos;
  while (end < s.size() && s[end] != ',' && s[end] != ']' && s[end] != ' ' && s[end] != '\t') ++end;
  const std::string token(s.substr(pos, end - pos));
  pos = end;
  ConfigValue v;
  double num = 0.0;
  const auto res = std::from_chars(token.data(), token.data() + token.size(), num);
  if (res.ec == std::errc() && res.ptr == token.data() + token.size()) {
    v.kind = ConfigValue::Kind::number;
    v.num = num;
  } else {
    v.kind = ConfigValue::Kind::ident;
    v.ident = token;
  }
  return v;
}

inline std::vector<double> as_number_list(const ConfigValue& v, const std::string& where) {
  if (v.kind != ConfigValue::Kind::list) throw ParseError(where + ": expected an array");
  std::vector<double> out;
  for (const ConfigValue& item : v.items) {
    if (item.kind != ConfigValue::Kind::number) throw ParseError(where + ": expected a flat numeric array");
    out.push_back(item.num);
  }
  return out;
}

inline std::vector<std::vector<double>> as_number_matrix(const ConfigValue& v, const std::string& where) {
  if (v.kind != ConfigValue::Kind::list) throw ParseError(where + ": expected a nested array");
  std::vector<std::vector<double>> out;
  for (const ConfigValue& item : v.items) out.push_back(as_number_list(item, where));
  return out;
}

inline double as_number(const ConfigValue& v, const std::string& where) {
  if (v.kind != ConfigValue::Kind::number) throw ParseError(where + ": expected a number");
  return v.num;
}

}  // namespace detail

inline NpsemSpec parse_spec(const std::string& text, const std::string& origin = "spec") {
  static const std::set<std::string> kKnownKeys = {
      "covariate_levels", "covariate_pmf",  "z_support",        "instrument_policy", "treatment_kernel",
      "outcome_alpha",    "outcome_gamma",  "outcome_delta",    "outcome_noise_sd",  "outcome_mode"};

  std::map<std::string, detail::ConfigValue> values;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    const std::string where = origin + ": line " + std::to_string(lineno);
    const std::size_t eq = body.find('=');
    if (eq == std::string::npos) throw ParseError(where + ": expected 'key = value'");
    const std::string key = detail::trim(std::string_view(body).substr(0, eq));
    if (kKnownKeys.count(key) == 0) throw ParseError(where + ": unknown key '" + key + "'");
    if (values.count(key)) throw ParseError(where + ": duplicate key '" + key + "'");
    std::size_t pos = eq + 1;
    values[key] = detail::parse_config_value(body, pos, where);
    while (pos < body.size() && (body[pos] == ' ' || body[pos] == '\t')) ++pos;
    if (pos != body.size()) throw ParseError(where + ": trailing content after value");
  }
  for (const std::string& key : kKnownKeys)
    if (key != "outcome_mode" && values.count(key) == 0)
      throw ParseError(origin + ": missing required key '" + key + "'");

  NpsemSpec spec;
  spec.covariate_levels = detail::as_number_matrix(values.at("covariate_levels"), origin + ": covariate_levels");
  spec.covariate_pmf = detail::as_number_list(values.at("covariate_pmf"), origin + ": covariate_pmf");
  spec.z_support = detail::as_number_list(values.at("z_support"), origin + ": z_support");
  spec.instrument_policy = detail::as_number_matrix(values.at("instrument_policy"), origin + ": instrument_policy");
  spec.treatment_kernel = detail::as_number_matrix(values.at("treatment_kernel"), origin + ": treatment_kernel");
  spec.outcome_alpha = detail::as_number(values.at("outcome_alpha"), origin + ": outcome_alpha");
  spec.outcome_gamma = detail::as_number_list(values.at("outcome_gamma"), origin + ": outcome_gamma");
  spec.outcome_delta = detail::as_number(values.at("outcome_delta"), origin + ": outcome_delta");
  spec.outcome_noise_sd = detail::as_number(values.at("outcome_noise_sd"), origin + ": outcome_noise_sd");
  if (values.count("outcome_mode")) {
    const detail::ConfigValue& v = values.at("outcome_mode");
    if (v.kind != detail::ConfigValue::Kind::ident)
      throw ParseError(origin + ": outcome_mode: expected an identifier");
    if (v.ident == "additive") {
      spec.outcome_mode = OutcomeMode::additive;
    } else if (v.ident == "multiplicative_confounding") {
      spec.outcome_mode = OutcomeMode::multiplicative_confounding;
    } else {
      throw ParseError(origin + ": outcome_mode: unknown mode '" + v.ident + "'");
    }
  }
  spec.validate();
  return spec;
}

inline NpsemSpec read_spec_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_spec(buf.str(), path);
}

inline std::string serialize_spec(const NpsemSpec& spec) {
  const auto list = [](const std::vector<double>& v) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
    return s + "]";
  };
  const auto matrix = [&](const std::vector<std::vector<double>>& m) {
    std::string s = "[";
    for (std::size_t i = 0; i < m.size(); ++i) s += (i ? "," : "") + list(m[i]);
    return s + "]";
  };
  std::ostringstream out;
  out << "covariate_levels = " << matrix(spec.covariate_levels) << "\n";
  out << "covariate_pmf = " << list(spec.covariate_pmf) << "\n";
  out << "z_support = " << list(spec.z_support) << "\n";
  out << "instrument_policy = " << matrix(spec.instrument_policy) << "\n";
  out << "treatment_kernel = " << matrix(spec.treatment_kernel) << "\n";
  out << "outcome_alpha = " << format_double(spec.outcome_alpha) << "\n";
  out << "outcome_gamma = " << list(spec.outcome_gamma) << "\n";
  out << "outcome_delta = " << format_double(spec.outcome_delta) << "\n";
  out << "outcome_noise_sd = " << format_double(spec.outcome_noise_sd) << "\n";
  out << "outcome_mode = "
      << (spec.outcome_mode == OutcomeMode::additive ? "additive" : "multiplicative_confounding") << "\n";
  return out.str();
}

inline void write_spec_file(const std::string& path, const NpsemSpec& spec) {
  detail::write_text(path, serialize_spec(spec));
}

// ---------------------------------------------------------------------------
// JSON emission

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    hash ^= c;
    hash *= 0x100000001b3ull;
  }
  return hash;
}

inline std::string hex64(std::uint64_t v) {
  static const char* kDigits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[v & 0xF];
    v >>= 4;
  }
  return out;
}

struct RunInfo {
  std::uint64_t seed = 0;
  std::string config_hash;  // hex64 of the canonical config text
  std::string version = kVersion;
};

inline ordered_json to_json(const RunInfo& info) {
  return ordered_json{{"seed", info.seed}, {"config_hash", info.config_hash}, {"version", info.version}};
}

inline ordered_json to_json(const TmleResult& r) {
  return ordered_json{{"psi", r.psi},
                      {"se", r.se},
                      {"ci", {r.ci_lo, r.ci_hi}},
                      {"alpha", r.alpha},
                      {"epsilon", r.epsilon},
                      {"mean_eic", r.mean_eic},
                      {"plugin_psi", r.plugin_psi},
                      {"converged", r.converged}};
}

inline ordered_json to_json(const Table1Report& rep) {
  ordered_json rows = ordered_json::array();
  for (const Table1Row& row : rep.rows)
    rows.push_back(ordered_json{{"n", row.n},
                                {"mean_tmle", row.mean_tmle},
                                {"mean_plugin", row.mean_plugin},
                                {"mean_se", row.mean_se},
                                {"coverage", row.coverage},
                                {"coverage_alt", row.coverage2}});
  return ordered_json{{"truth", rep.truth},
                      {"alpha", rep.alpha},
                      {"alpha_alt", rep.alpha2},
                      {"replications", rep.replications},
                      {"seed", rep.seed},
                      {"rows", rows}};
}

inline ordered_json marginal_to_json(const InducedMarginal& m) {
  ordered_json strata = ordered_json::array();
  for (const auto& [key, g] : m.g1) {
    ordered_json w = ordered_json::array();
    for (double v : key) w.push_back(v);
    strata.push_back(ordered_json{{"w", w}, {"g1", g}});
  }
  ordered_json subset = ordered_json::array();
  for (std::size_t dim : m.covariate_subset) subset.push_back(dim + 1);
  return ordered_json{{"covariate_subset", subset}, {"provenance", m.provenance}, {"strata", strata}};
}

inline void write_json_file(const std::string& path, const ordered_json& j) {
  detail::write_text(path, j.dump(2) + "\n");
}

}  // namespace ivpol
