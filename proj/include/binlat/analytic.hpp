#pragma once

// Deterministic report of the asymptotic quantities for a configured model:
// the GLM limit point, the boundary-score constants per trial count, the
// information and sandwich matrices with eigenvalues, the pile-up bounds
// over a range of sample sizes, and the near-linearity diagnostic.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "binlat/asymptotics.hpp"
#include "binlat/config.hpp"
#include "binlat/harness.hpp"

namespace binlat {

struct AnalyticCell {
  double phi = 0.0;
  AsymptoticReport report;                    // at cfg.n and constant-m spec
  std::vector<int> m_list;                    // rows of the score-constant table
  std::vector<double> c_S, sigma_S, ratio;    // per m
  std::vector<long> n_list;
  std::vector<double> kappa1_vs_n, kappa2_vs_n;
  LinearityDiagnostic linearity;              // at (beta0, tau0)
};

struct AnalyticResult {
  ExperimentConfig config;
  std::uint64_t hash = 0;
  std::vector<AnalyticCell> cells;
};

inline AnalyticResult run_analytic(const ExperimentConfig& cfg, int threads = 0) {
  cfg.validate();
  AnalyticResult res;
  res.config = cfg;
  res.hash = config_hash(cfg);
  const QuadratureRule rule = gauss_hermite(cfg.quadrature_order);
  const QuadratureRule rule2d = gauss_hermite(cfg.joint_quadrature_order);
  const TrendDesign design = TrendDesign::linear_trend();
  AsymptoticOptions aopts;
  aopts.mesh = cfg.mesh;
  aopts.threads = threads;

  for (double phi : cfg.phi_list) {
    AnalyticCell cell;
    cell.phi = phi;
    const ModelParams truth(cfg.beta0, cfg.tau0, phi);
    cell.report =
        make_asymptotic_report(truth, design, cfg.m_spec, cfg.n, rule, rule2d, aopts);
    cell.m_list = cfg.m_list;
    for (int m : cfg.m_list) {
      const ScoreMoments sm =
          score_moments(truth, design, MDist::constant(m), rule, rule2d, aopts);
      cell.c_S.push_back(sm.c_S);
      cell.sigma_S.push_back(sm.sigma_S);
      cell.ratio.push_back(sm.c_S / sm.sigma_S);
    }
    cell.n_list = cfg.n_list;
    for (long n : cfg.n_list) {
      const double rootn = std::sqrt(static_cast<double>(n));
      cell.kappa1_vs_n.push_back(
          normal_cdf(-rootn * cell.report.c_S / cell.report.sigma_S));
      cell.kappa2_vs_n.push_back(normal_cdf(-rootn * cfg.tau0 / cell.report.sigma_tau));
    }
    cell.linearity = linearity_diagnostic(cfg.beta0, cfg.tau0, design, rule, cfg.mesh);
    res.cells.push_back(std::move(cell));
  }
  return res;
}

namespace detail {

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

inline std::vector<double> eigenvalues_desc(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m, Eigen::EigenvaluesOnly);
  std::vector<double> ev(es.eigenvalues().data(),
                         es.eigenvalues().data() + es.eigenvalues().size());
  std::reverse(ev.begin(), ev.end());
  return ev;
}

inline void emit_matrix_csv(std::ofstream& out, double phi, const std::string& name,
                            const Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      out << fmt4(phi) << "," << name << "[" << i << "][" << j << "],"
          << fmt4(m(i, j)) << "\n";
}

}  // namespace detail

inline nlohmann::json analytic_to_json(const AnalyticResult& res) {
  nlohmann::json j;
  j["schema_version"] = res.config.schema_version;
  j["config"] = canonical_config(res.config);
  j["config_hash"] = res.hash;
  j["seed"] = res.config.seed;
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : res.cells) {
    nlohmann::json cj;
    cj["phi"] = c.phi;
    cj["beta_prime"] = std::vector<double>(c.report.beta_prime.data(),
                                           c.report.beta_prime.data() +
                                               c.report.beta_prime.size());
    cj["c1"] = c.report.c1;
    cj["c2"] = c.report.c2;
    cj["omega11"] = detail::matrix_to_json(c.report.omega11);
    cj["omega11_eigenvalues"] = detail::eigenvalues_desc(c.report.omega11);
    cj["omega12"] = detail::matrix_to_json(c.report.omega12);
    cj["sandwich_marginal"] = detail::matrix_to_json(c.report.sandwich_marginal);
    cj["sigma_tau"] = c.report.sigma_tau;
    cj["omega1"] = detail::matrix_to_json(c.report.omega1);
    cj["omega2"] = detail::matrix_to_json(c.report.omega2);
    cj["sandwich_glm"] = detail::matrix_to_json(c.report.sandwich_glm);
    cj["omega11_condition"] = c.report.omega11_condition;
    cj["near_singular"] = c.report.near_singular;
    cj["m_list"] = c.m_list;
    cj["c_S"] = c.c_S;
    cj["sigma_S"] = c.sigma_S;
    cj["c_S_over_sigma_S"] = c.ratio;
    cj["n_list"] = c.n_list;
    cj["kappa1_bar_vs_n"] = c.kappa1_vs_n;
    cj["kappa2_bar_vs_n"] = c.kappa2_vs_n;
    cj["linearity"] = {{"a0", c.linearity.a0},
                       {"a1", c.linearity.a1},
                       {"max_abs_residual", c.linearity.max_abs_residual}};
    cells.push_back(cj);
  }
  j["cells"] = cells;
  return j;
}

inline std::vector<std::string> emit_analytic(const AnalyticResult& res,
                                              const std::string& format,
                                              const std::string& dir) {
  if (format != "csv" && format != "json")
    throw std::invalid_argument("emit_analytic: format must be csv or json");
  std::filesystem::create_directories(dir);
  const std::string path = dir + "/analytic." + format;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("emit_analytic: cannot write " + path);
  if (format == "json") {
    out << analytic_to_json(res).dump(2) << "\n";
  } else {
    char meta[128];
    std::snprintf(meta, sizeof meta, "# schema_version=%d config_hash=%016llx seed=%llu\n",
                  res.config.schema_version,
                  static_cast<unsigned long long>(res.hash),
                  static_cast<unsigned long long>(res.config.seed));
    out << meta << "phi,quantity,value\n";
    using detail::fmt4;
    for (const auto& c : res.cells) {
      const double phi = c.phi;
      for (Eigen::Index i = 0; i < c.report.beta_prime.size(); ++i)
        out << fmt4(phi) << ",beta_prime[" << i << "]," << fmt4(c.report.beta_prime[i])
            << "\n";
      out << fmt4(phi) << ",c1," << fmt4(c.report.c1) << "\n";
      out << fmt4(phi) << ",c2," << fmt4(c.report.c2) << "\n";
      for (std::size_t i = 0; i < c.m_list.size(); ++i) {
        out << fmt4(phi) << ",c_S[m=" << c.m_list[i] << "]," << fmt4(c.c_S[i]) << "\n";
        out << fmt4(phi) << ",sigma_S[m=" << c.m_list[i] << "]," << fmt4(c.sigma_S[i])
            << "\n";
        out << fmt4(phi) << ",c_S/sigma_S[m=" << c.m_list[i] << "]," << fmt4(c.ratio[i])
            << "\n";
      }
      detail::emit_matrix_csv(out, phi, "omega11", c.report.omega11);
      {
        const auto ev = detail::eigenvalues_desc(c.report.omega11);
        for (std::size_t i = 0; i < ev.size(); ++i)
          out << fmt4(phi) << ",omega11_eig[" << i << "]," << fmt4(ev[i]) << "\n";
      }
      detail::emit_matrix_csv(out, phi, "omega12", c.report.omega12);
      detail::emit_matrix_csv(out, phi, "sandwich_marginal", c.report.sandwich_marginal);
      out << fmt4(phi) << ",sigma_tau," << fmt4(c.report.sigma_tau) << "\n";
      detail::emit_matrix_csv(out, phi, "omega1", c.report.omega1);
      detail::emit_matrix_csv(out, phi, "omega2", c.report.omega2);
      detail::emit_matrix_csv(out, phi, "sandwich_glm", c.report.sandwich_glm);
      for (std::size_t i = 0; i < c.n_list.size(); ++i) {
        out << fmt4(phi) << ",kappa1_bar[n=" << c.n_list[i] << "],"
            << fmt4(c.kappa1_vs_n[i]) << "\n";
        out << fmt4(phi) << ",kappa2_bar[n=" << c.n_list[i] << "],"
            << fmt4(c.kappa2_vs_n[i]) << "\n";
      }
      out << fmt4(phi) << ",linearity_a0," << fmt4(c.linearity.a0) << "\n";
      out << fmt4(phi) << ",linearity_a1," << fmt4(c.linearity.a1) << "\n";
      out << fmt4(phi) << ",linearity_max_abs_residual,"
          << fmt4(c.linearity.max_abs_residual) << "\n";
    }
  }
  if (!out) throw std::runtime_error("emit_analytic: write failed for " + path);
  return {path};
}

}  // namespace binlat
