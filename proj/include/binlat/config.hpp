#pragma once

// Flat key = value experiment description.  Lines are `key = value`, `#`
// starts a comment, keys are fixed by the schema below and unknown keys are
// rejected.  The canonical serialization (sorted keys, one per line) is what
// gets hashed into output metadata.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "binlat/design.hpp"
#include "binlat/model.hpp"

namespace binlat {

struct ExperimentConfig {
  int schema_version = 1;
  std::vector<std::string> outputs;  // table1 | table2 | table3 | analytic
  long n = 200;
  MDist m_spec = MDist::constant(1);
  Vector beta0;
  double tau0 = 1.0;
  std::vector<double> phi_list{0.0};
  long replications = 1000;
  std::uint64_t seed = 1;
  int quadrature_order = 32;
  int joint_quadrature_order = 9;
  double mesh = 1e-4;
  std::vector<long> C_list{1, 2, 4, 8};
  std::vector<long> n_list{200, 500, 1000, 5000};  // analytic: kappa-vs-n rows
  std::vector<int> m_list{1, 2, 3};                // analytic: c_S/sigma_S rows

  void validate() const {
    if (schema_version != 1) throw std::invalid_argument("config: unsupported schema_version");
    if (outputs.empty()) return;  // permitted: nothing to emit
    for (const auto& o : outputs)
      if (o != "table1" && o != "table2" && o != "table3" && o != "analytic")
        throw std::invalid_argument("config: unknown output table '" + o + "'");
    if (n < 2) throw std::invalid_argument("config: n must be >= 2");
    if (replications < 1) throw std::invalid_argument("config: replications must be >= 1");
    if (beta0.size() < 1) throw std::invalid_argument("config: beta0 is required");
    if (tau0 < 0.0) throw std::invalid_argument("config: tau0 must be >= 0");
    for (double phi : phi_list)
      if (!(std::abs(phi) < 1.0)) throw std::invalid_argument("config: phi must be in (-1,1)");
    if (quadrature_order < 1 || quadrature_order > 128)
      throw std::invalid_argument("config: quadrature_order out of range");
    if (joint_quadrature_order < 1 || joint_quadrature_order > 128)
      throw std::invalid_argument("config: joint_quadrature_order out of range");
    if (!(mesh > 0.0 && mesh <= 1.0)) throw std::invalid_argument("config: bad mesh");
    for (long c : C_list)
      if (c < 1) throw std::invalid_argument("config: C values must be >= 1");
    m_spec.validate();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

inline double to_double(const std::string& s) {
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("config: bad number '" + s + "'");
  return v;
}

inline long to_long(const std::string& s) {
  std::size_t pos = 0;
  const long v = std::stol(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("config: bad integer '" + s + "'");
  return v;
}

}  // namespace detail

inline ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig cfg;
  cfg.outputs.clear();
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: expected 'key = value' in line '" + line + "'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    if (kv.count(key)) throw std::invalid_argument("config: duplicate key '" + key + "'");
    kv[key] = val;
  }
  auto take = [&](const std::string& key) -> std::string {
    auto it = kv.find(key);
    if (it == kv.end()) return "";
    const std::string v = it->second;
    kv.erase(it);
    return v;
  };
  if (const auto v = take("schema_version"); !v.empty())
    cfg.schema_version = static_cast<int>(detail::to_long(v));
  if (const auto v = take("outputs"); !v.empty()) cfg.outputs = detail::split(v, ',');
  if (const auto v = take("n"); !v.empty()) cfg.n = detail::to_long(v);
  if (const auto v = take("m"); !v.empty())
    cfg.m_spec = MDist::constant(static_cast<int>(detail::to_long(v)));
  if (const auto v = take("m_dist"); !v.empty()) {
    MDist d;
    for (const auto& atom : detail::split(v, ',')) {
      const auto parts = detail::split(atom, ':');
      if (parts.size() != 2) throw std::invalid_argument("config: m_dist atoms are m:kappa");
      d.atoms.emplace_back(static_cast<int>(detail::to_long(parts[0])),
                           detail::to_double(parts[1]));
    }
    cfg.m_spec = d;
  }
  if (const auto v = take("beta0"); !v.empty()) {
    const auto parts = detail::split(v, ',');
    cfg.beta0.resize(static_cast<Eigen::Index>(parts.size()));
    for (std::size_t i = 0; i < parts.size(); ++i)
      cfg.beta0[static_cast<Eigen::Index>(i)] = detail::to_double(parts[i]);
  }
  if (const auto v = take("tau0"); !v.empty()) cfg.tau0 = detail::to_double(v);
  if (const auto v = take("phi"); !v.empty()) {
    cfg.phi_list.clear();
    for (const auto& p : detail::split(v, ',')) cfg.phi_list.push_back(detail::to_double(p));
  }
  if (const auto v = take("replications"); !v.empty()) cfg.replications = detail::to_long(v);
  if (const auto v = take("seed"); !v.empty())
    cfg.seed = static_cast<std::uint64_t>(std::stoull(v));
  if (const auto v = take("quadrature_order"); !v.empty())
    cfg.quadrature_order = static_cast<int>(detail::to_long(v));
  if (const auto v = take("joint_quadrature_order"); !v.empty())
    cfg.joint_quadrature_order = static_cast<int>(detail::to_long(v));
  if (const auto v = take("mesh"); !v.empty()) cfg.mesh = detail::to_double(v);
  if (const auto v = take("C"); !v.empty()) {
    cfg.C_list.clear();
    for (const auto& c : detail::split(v, ',')) cfg.C_list.push_back(detail::to_long(c));
  }
  if (const auto v = take("n_list"); !v.empty()) {
    cfg.n_list.clear();
    for (const auto& c : detail::split(v, ',')) cfg.n_list.push_back(detail::to_long(c));
  }
  if (const auto v = take("m_list"); !v.empty()) {
    cfg.m_list.clear();
    for (const auto& c : detail::split(v, ','))
      cfg.m_list.push_back(static_cast<int>(detail::to_long(c)));
  }
  if (!kv.empty())
    throw std::invalid_argument("config: unknown key '" + kv.begin()->first + "'");
  cfg.validate();
  return cfg;
}

inline ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open '" + path + "'");
  return parse_config(in);
}

inline std::string canonical_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  auto join_d = [](const auto& xs) {
    std::ostringstream s;
    s.precision(17);
    for (std::size_t i = 0; i < static_cast<std::size_t>(xs.size()); ++i)
      s << (i ? "," : "") << xs[static_cast<Eigen::Index>(i)];
    return s.str();
  };
  auto join_l = [](const auto& xs) {
    std::ostringstream s;
    for (std::size_t i = 0; i < xs.size(); ++i) s << (i ? "," : "") << xs[i];
    return s.str();
  };
  os << "C = " << join_l(cfg.C_list) << "\n";
  os << "beta0 = " << join_d(cfg.beta0) << "\n";
  os << "joint_quadrature_order = " << cfg.joint_quadrature_order << "\n";
  {
    std::ostringstream s;
    s.precision(17);
    for (std::size_t i = 0; i < cfg.m_spec.atoms.size(); ++i)
      s << (i ? "," : "") << cfg.m_spec.atoms[i].first << ":" << cfg.m_spec.atoms[i].second;
    os << "m_dist = " << s.str() << "\n";
  }
  os << "m_list = " << join_l(cfg.m_list) << "\n";
  os << "mesh = " << cfg.mesh << "\n";
  os << "n = " << cfg.n << "\n";
  os << "n_list = " << join_l(cfg.n_list) << "\n";
  os << "outputs = " << join_l(cfg.outputs) << "\n";
  {
    std::ostringstream s;
    s.precision(17);
    for (std::size_t i = 0; i < cfg.phi_list.size(); ++i)
      s << (i ? "," : "") << cfg.phi_list[i];
    os << "phi = " << s.str() << "\n";
  }
  os << "quadrature_order = " << cfg.quadrature_order << "\n";
  os << "replications = " << cfg.replications << "\n";
  os << "schema_version = " << cfg.schema_version << "\n";
  os << "seed = " << cfg.seed << "\n";
  os << "tau0 = " << cfg.tau0 << "\n";
  return os.str();
}

// FNV-1a over the canonical serialization
inline std::uint64_t config_hash(const ExperimentConfig& cfg) {
  const std::string s = canonical_config(cfg);
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace binlat
