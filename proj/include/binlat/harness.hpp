#pragma once

// Seeded Monte Carlo experiment runner and table writer.  Each (phi) cell
// simulates `replications` series on substream seeds, fits GLM and marginal
// likelihood, and summarizes estimates, degeneracy frequencies and (for
// table3) subsampling covariance estimates next to the theoretical columns
// from the asymptotics module.
//
// Determinism: replication i of cell c draws from
//   Rng(substream_seed(substream_seed(master, c), i))
// and per-replication records are reduced in index order, so output files
// are byte-identical for a given config + seed at any thread count.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "binlat/asymptotics.hpp"
#include "binlat/config.hpp"
#include "binlat/design.hpp"
#include "binlat/glm.hpp"
#include "binlat/marginal.hpp"
#include "binlat/model.hpp"
#include "binlat/subsampling.hpp"
#include "binlat/util.hpp"

namespace binlat {

constexpr double kDegeneracyThreshold = 1e-6;   // tau_hat at the boundary
constexpr double kScoreZeroThreshold = 1e-6;    // S_1n counted as <= 0
constexpr double kImplicationSlack = 1e-4;      // optimizer tolerance in the check

struct CellResult {
  double phi = 0.0;
  long n = 0;
  std::string m_desc;
  long replications = 0;
  long failures = 0;
  long violations = 0;  // tau_hat <= threshold but S_1n above slack
  long n_degenerate = 0;

  std::vector<double> mean_delta;  // beta components then tau
  std::vector<double> sd_delta;
  double kappa1_hat = 0.0;
  double kappa2_hat = 0.0;

  std::vector<double> asd;  // sqrt(diag(marginal sandwich)/n)
  double kappa1_bar = 0.0;
  double kappa2_bar = 0.0;
  double sigma_tau = 0.0;

  // table1 columns
  std::vector<double> cond0_mean, cond0_sd;      // beta_hat | tau_hat = 0
  std::vector<double> condpos_mean, condpos_sd;  // beta_hat | tau_hat > 0
  std::vector<double> f1_mean, f1_sd;            // theoretical branches
  std::vector<double> f2_mean, f2_sd;

  // table3 columns
  std::vector<long> k_n;
  std::vector<std::vector<double>> sub_mean_sd;  // per C: (beta..., tau)
  std::vector<long> sub_usable;
  double sub_order_frac = std::numeric_limits<double>::quiet_NaN();
};

struct ExperimentResult {
  ExperimentConfig config;
  std::uint64_t hash = 0;
  std::vector<CellResult> cells;
};

namespace detail {

struct RepRecord {
  bool ok = false;
  bool degenerate = false;
  bool score_nonpos = false;
  bool violation = false;
  Vector delta;  // beta..., tau
  std::vector<Vector> sub_sd;  // per C, empty if unavailable
  std::vector<bool> sub_ok;
};

inline Eigen::VectorXi draw_trial_counts(long n, const MDist& mdist, Rng& rng) {
  Eigen::VectorXi m(n);
  if (mdist.is_constant()) {
    m.setConstant(mdist.constant_m());
    return m;
  }
  for (long t = 0; t < n; ++t) {
    const double u = rng.uniform();
    double acc = 0.0;
    int drawn = mdist.atoms.back().first;
    for (const auto& [mm, kappa] : mdist.atoms) {
      acc += kappa;
      if (u <= acc) {
        drawn = mm;
        break;
      }
    }
    m[t] = drawn;
  }
  return m;
}

inline RepRecord run_replication(const ExperimentConfig& cfg, double phi,
                                 std::uint64_t rep_seed, const Matrix& X,
                                 const QuadratureRule& rule, bool want_subsampling) {
  RepRecord rec;
  Rng rng(rep_seed);
  try {
    const Eigen::VectorXi m = draw_trial_counts(cfg.n, cfg.m_spec, rng);
    const ModelParams truth(cfg.beta0, cfg.tau0, phi);
    const BinomialSeries data = simulate_series(X, m, truth, rng);

    const GlmFit glm = glm_fit(data);
    const double s1n = tau_score_at_zero(glm.beta_tilde, data);
    rec.score_nonpos = s1n <= kScoreZeroThreshold;

    MarginalOptions mopts;
    mopts.degeneracy_threshold = kDegeneracyThreshold;
    const FitResult fit = fit_marginal(data, rule, mopts);
    rec.degenerate = fit.tau_hat <= kDegeneracyThreshold;
    rec.violation = rec.degenerate && s1n > kImplicationSlack;
    rec.delta.resize(data.dim() + 1);
    rec.delta.head(data.dim()) = fit.beta_hat;
    rec.delta[data.dim()] = fit.tau_hat;

    if (want_subsampling) {
      rec.sub_sd.resize(cfg.C_list.size());
      rec.sub_ok.assign(cfg.C_list.size(), false);
      if (!rec.degenerate) {
        for (std::size_t ci = 0; ci < cfg.C_list.size(); ++ci) {
          try {
            const SubsampleCovariance sc = subsample_covariance(
                data, fit.beta_hat, fit.tau_hat, cfg.C_list[ci], rule,
                kDegeneracyThreshold);
            rec.sub_sd[ci] =
                (sc.covariance.diagonal() / static_cast<double>(cfg.n)).cwiseSqrt();
            rec.sub_ok[ci] = true;
          } catch (const std::exception&) {
            // leave this C unavailable, the rep still counts elsewhere
          }
        }
      }
    }
    rec.ok = true;
  } catch (const std::exception&) {
    rec.ok = false;
  }
  return rec;
}

inline std::vector<double> to_std(const Vector& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline void mean_sd(const std::vector<const Vector*>& xs, std::vector<double>& mean,
                    std::vector<double>& sd) {
  mean.clear();
  sd.clear();
  if (xs.empty()) return;
  const Eigen::Index d = xs.front()->size();
  Vector mu = Vector::Zero(d);
  for (const auto* x : xs) mu += *x;
  mu /= static_cast<double>(xs.size());
  mean = to_std(mu);
  if (xs.size() < 2) {
    sd.assign(d, std::numeric_limits<double>::quiet_NaN());
    return;
  }
  Vector ss = Vector::Zero(d);
  for (const auto* x : xs) ss += (*x - mu).cwiseAbs2();
  sd = to_std((ss / static_cast<double>(xs.size() - 1)).cwiseSqrt().eval());
}

inline std::string mdist_desc(const MDist& d) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < d.atoms.size(); ++i) {
    if (i) os << ",";
    if (d.is_constant())
      os << d.atoms[i].first;
    else
      os << d.atoms[i].first << ":" << d.atoms[i].second;
  }
  return os.str();
}

}  // namespace detail

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, int threads = 0) {
  cfg.validate();
  ExperimentResult result;
  result.config = cfg;
  result.hash = config_hash(cfg);

  const bool want_table1 =
      std::count(cfg.outputs.begin(), cfg.outputs.end(), "table1") > 0;
  const bool want_table3 =
      std::count(cfg.outputs.begin(), cfg.outputs.end(), "table3") > 0;
  const bool mc_needed =
      want_table1 || want_table3 ||
      std::count(cfg.outputs.begin(), cfg.outputs.end(), "table2") > 0;
  if (!mc_needed) return result;

  const QuadratureRule rule = gauss_hermite(cfg.quadrature_order);
  const QuadratureRule rule2d = gauss_hermite(cfg.joint_quadrature_order);
  const Matrix X = linear_trend_design(cfg.n);
  const TrendDesign design = TrendDesign::linear_trend();
  const int r = static_cast<int>(cfg.beta0.size());
  threads = resolve_threads(threads);

  AsymptoticOptions aopts;
  aopts.mesh = cfg.mesh;
  aopts.threads = threads;

  for (std::size_t cell_idx = 0; cell_idx < cfg.phi_list.size(); ++cell_idx) {
    const double phi = cfg.phi_list[cell_idx];
    CellResult cell;
    cell.phi = phi;
    cell.n = cfg.n;
    cell.m_desc = detail::mdist_desc(cfg.m_spec);
    cell.replications = cfg.replications;

    // theoretical columns once per cell
    const ModelParams truth(cfg.beta0, cfg.tau0, phi);
    const AsymptoticReport rep =
        make_asymptotic_report(truth, design, cfg.m_spec, cfg.n, rule, rule2d, aopts);
    cell.asd = detail::to_std(
        (rep.sandwich_marginal.diagonal() / static_cast<double>(cfg.n)).cwiseSqrt().eval());
    cell.kappa1_bar = rep.kappa1_bar;
    cell.kappa2_bar = rep.kappa2_bar;
    cell.sigma_tau = rep.sigma_tau;

    // replications on substreams, stored by index and reduced in order
    const std::uint64_t cell_seed = Rng::substream_seed(cfg.seed, cell_idx);
    std::vector<detail::RepRecord> recs(static_cast<std::size_t>(cfg.replications));
    {
      std::vector<std::thread> pool;
      for (int w = 0; w < threads; ++w) {
        pool.emplace_back([&, w]() {
          for (long i = w; i < cfg.replications; i += threads)
            recs[static_cast<std::size_t>(i)] = detail::run_replication(
                cfg, phi, Rng::substream_seed(cell_seed, static_cast<std::uint64_t>(i)),
                X, rule, want_table3);
        });
      }
      for (auto& th : pool) th.join();
    }

    std::vector<const Vector*> all, cond0, condpos;
    long score_nonpos = 0;
    for (const auto& rec : recs) {
      if (!rec.ok) {
        ++cell.failures;
        continue;
      }
      all.push_back(&rec.delta);
      if (rec.degenerate) {
        ++cell.n_degenerate;
        cond0.push_back(&rec.delta);
      } else {
        condpos.push_back(&rec.delta);
      }
      if (rec.score_nonpos) ++score_nonpos;
      if (rec.violation) ++cell.violations;
    }
    const double n_ok = static_cast<double>(all.size());
    detail::mean_sd(all, cell.mean_delta, cell.sd_delta);
    cell.kappa1_hat = n_ok > 0 ? score_nonpos / n_ok : 0.0;
    cell.kappa2_hat = n_ok > 0 ? cell.n_degenerate / n_ok : 0.0;

    if (want_table1) {
      std::vector<double> tmp_sd;
      detail::mean_sd(cond0, cell.cond0_mean, cell.cond0_sd);
      detail::mean_sd(condpos, cell.condpos_mean, cell.condpos_sd);
      if (!cell.cond0_mean.empty()) {
        cell.cond0_mean.pop_back();  // drop the tau column, it is exactly 0
        cell.cond0_sd.pop_back();
      }
      if (!cell.condpos_mean.empty()) {
        // conditional tau moments feed the theoretical interior branch
        const double tau_mean = cell.condpos_mean.back();
        const double tau_sd = cell.condpos_sd.back();
        cell.condpos_mean.pop_back();
        cell.condpos_sd.pop_back();
        try {
          const MixtureMoments mm = mixture_moments(
              truth, design, cfg.m_spec, cfg.n, tau_mean - cfg.tau0,
              tau_sd * tau_sd, rule, rule2d, aopts);
          cell.f1_mean = detail::to_std(mm.f1_mean);
          cell.f1_sd = detail::to_std(mm.f1_cov.diagonal().cwiseSqrt().eval());
          cell.f2_mean = detail::to_std(mm.f2_mean);
          cell.f2_sd = detail::to_std(mm.f2_cov.diagonal().cwiseSqrt().eval());
        } catch (const std::exception&) {
          // leave mixture columns empty when the tau variance is singular
        }
      }
    }

    if (want_table3) {
      const long kbase = subsample_block_length(cfg.n, 1);
      for (long C : cfg.C_list) cell.k_n.push_back(C * kbase);
      cell.sub_mean_sd.assign(cfg.C_list.size(), std::vector<double>());
      cell.sub_usable.assign(cfg.C_list.size(), 0);
      for (std::size_t ci = 0; ci < cfg.C_list.size(); ++ci) {
        Vector acc = Vector::Zero(r + 1);
        long used = 0;
        for (const auto& rec : recs) {
          if (!rec.ok || rec.sub_ok.size() <= ci || !rec.sub_ok[ci]) continue;
          acc += rec.sub_sd[ci];
          ++used;
        }
        cell.sub_usable[ci] = used;
        if (used > 0) cell.sub_mean_sd[ci] = detail::to_std((acc / used).eval());
      }
      // fraction of replications where the smallest-k estimate for the slope
      // dominates the largest-k one (downward bias grows with k)
      if (cfg.C_list.size() >= 2 && r >= 2) {
        long both = 0, ordered = 0;
        for (const auto& rec : recs) {
          if (!rec.ok || rec.sub_ok.empty() || !rec.sub_ok.front() || !rec.sub_ok.back())
            continue;
          ++both;
          if (rec.sub_sd.front()[1] >= rec.sub_sd.back()[1]) ++ordered;
        }
        cell.sub_order_frac = both > 0
                                  ? static_cast<double>(ordered) / both
                                  : std::numeric_limits<double>::quiet_NaN();
      }
    }
    result.cells.push_back(std::move(cell));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

}  // namespace detail

inline nlohmann::json cell_to_json(const CellResult& c) {
  nlohmann::json j;
  j["phi"] = c.phi;
  j["n"] = c.n;
  j["m"] = c.m_desc;
  j["replications"] = c.replications;
  j["failures"] = c.failures;
  j["violations"] = c.violations;
  j["n_degenerate"] = c.n_degenerate;
  j["mean_delta"] = c.mean_delta;
  j["sd_delta"] = c.sd_delta;
  j["kappa1_hat"] = c.kappa1_hat;
  j["kappa2_hat"] = c.kappa2_hat;
  j["asd"] = c.asd;
  j["kappa1_bar"] = c.kappa1_bar;
  j["kappa2_bar"] = c.kappa2_bar;
  j["sigma_tau"] = c.sigma_tau;
  j["cond0_mean"] = c.cond0_mean;
  j["cond0_sd"] = c.cond0_sd;
  j["condpos_mean"] = c.condpos_mean;
  j["condpos_sd"] = c.condpos_sd;
  j["f1_mean"] = c.f1_mean;
  j["f1_sd"] = c.f1_sd;
  j["f2_mean"] = c.f2_mean;
  j["f2_sd"] = c.f2_sd;
  j["k_n"] = c.k_n;
  j["sub_mean_sd"] = c.sub_mean_sd;
  j["sub_usable"] = c.sub_usable;
  j["sub_order_frac"] = c.sub_order_frac;
  return j;
}

namespace detail {

// NaN serializes to null; map it back on the way in
inline double json_double(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline std::vector<double> json_dvec(const nlohmann::json& j) {
  std::vector<double> out;
  for (const auto& v : j) out.push_back(json_double(v));
  return out;
}

}  // namespace detail

inline CellResult cell_from_json(const nlohmann::json& j) {
  CellResult c;
  c.phi = j.at("phi");
  c.n = j.at("n");
  c.m_desc = j.at("m");
  c.replications = j.at("replications");
  c.failures = j.at("failures");
  c.violations = j.at("violations");
  c.n_degenerate = j.at("n_degenerate");
  c.mean_delta = detail::json_dvec(j.at("mean_delta"));
  c.sd_delta = detail::json_dvec(j.at("sd_delta"));
  c.kappa1_hat = j.at("kappa1_hat");
  c.kappa2_hat = j.at("kappa2_hat");
  c.asd = detail::json_dvec(j.at("asd"));
  c.kappa1_bar = detail::json_double(j.at("kappa1_bar"));
  c.kappa2_bar = detail::json_double(j.at("kappa2_bar"));
  c.sigma_tau = detail::json_double(j.at("sigma_tau"));
  c.cond0_mean = detail::json_dvec(j.at("cond0_mean"));
  c.cond0_sd = detail::json_dvec(j.at("cond0_sd"));
  c.condpos_mean = detail::json_dvec(j.at("condpos_mean"));
  c.condpos_sd = detail::json_dvec(j.at("condpos_sd"));
  c.f1_mean = detail::json_dvec(j.at("f1_mean"));
  c.f1_sd = detail::json_dvec(j.at("f1_sd"));
  c.f2_mean = detail::json_dvec(j.at("f2_mean"));
  c.f2_sd = detail::json_dvec(j.at("f2_sd"));
  c.k_n = j.at("k_n").get<std::vector<long>>();
  for (const auto& row : j.at("sub_mean_sd")) c.sub_mean_sd.push_back(detail::json_dvec(row));
  c.sub_usable = j.at("sub_usable").get<std::vector<long>>();
  c.sub_order_frac = detail::json_double(j.at("sub_order_frac"));
  return c;
}

inline nlohmann::json result_to_json(const ExperimentResult& r) {
  nlohmann::json j;
  j["schema_version"] = r.config.schema_version;
  j["config"] = canonical_config(r.config);
  j["config_hash"] = r.hash;
  j["seed"] = r.config.seed;
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) cells.push_back(cell_to_json(c));
  j["cells"] = cells;
  return j;
}

inline ExperimentResult result_from_json(const nlohmann::json& j) {
  ExperimentResult r;
  std::istringstream cfg_in(j.at("config").get<std::string>());
  r.config = parse_config(cfg_in);
  r.hash = j.at("config_hash");
  for (const auto& cj : j.at("cells")) r.cells.push_back(cell_from_json(cj));
  return r;
}

namespace detail {

inline void write_csv_header(std::ofstream& out, const ExperimentResult& r) {
  char meta[128];
  std::snprintf(meta, sizeof meta, "# schema_version=%d config_hash=%016llx seed=%llu\n",
                r.config.schema_version,
                static_cast<unsigned long long>(r.hash),
                static_cast<unsigned long long>(r.config.seed));
  out << meta;
}

inline void emit_table1_csv(const ExperimentResult& r, std::ofstream& out) {
  write_csv_header(out, r);
  out << "phi,n,m,replications";
  const std::size_t rdim = r.config.beta0.size();
  for (std::size_t i = 1; i <= rdim; ++i)
    out << ",f1_mean_b" << i << ",f1_sd_b" << i << ",f2_mean_b" << i << ",f2_sd_b" << i;
  out << ",kappa1_bar,kappa2_bar";
  for (std::size_t i = 1; i <= rdim; ++i)
    out << ",emp0_mean_b" << i << ",emp0_sd_b" << i << ",emppos_mean_b" << i
        << ",emppos_sd_b" << i;
  out << ",kappa1_hat,kappa2_hat,failures,violations\n";
  for (const auto& c : r.cells) {
    out << fmt4(c.phi) << "," << c.n << "," << c.m_desc << "," << c.replications;
    auto col = [&](const std::vector<double>& v, std::size_t i) {
      out << ",";
      out << (i < v.size() ? fmt4(v[i]) : "nan");
    };
    for (std::size_t i = 0; i < rdim; ++i) {
      col(c.f1_mean, i);
      col(c.f1_sd, i);
      col(c.f2_mean, i);
      col(c.f2_sd, i);
    }
    out << "," << fmt4(c.kappa1_bar) << "," << fmt4(c.kappa2_bar);
    for (std::size_t i = 0; i < rdim; ++i) {
      col(c.cond0_mean, i);
      col(c.cond0_sd, i);
      col(c.condpos_mean, i);
      col(c.condpos_sd, i);
    }
    out << "," << fmt4(c.kappa1_hat) << "," << fmt4(c.kappa2_hat) << "," << c.failures
        << "," << c.violations << "\n";
  }
}

inline void emit_table2_csv(const ExperimentResult& r, std::ofstream& out) {
  write_csv_header(out, r);
  const std::size_t rdim = r.config.beta0.size();
  out << "phi,n,m,replications";
  for (std::size_t i = 1; i <= rdim; ++i)
    out << ",mean_b" << i << ",sd_b" << i << ",asd_b" << i;
  out << ",mean_tau,sd_tau,asd_tau,kappa_hat,kappa1_bar,failures\n";
  for (const auto& c : r.cells) {
    out << fmt4(c.phi) << "," << c.n << "," << c.m_desc << "," << c.replications;
    for (std::size_t i = 0; i < rdim; ++i)
      out << "," << fmt4(c.mean_delta[i]) << "," << fmt4(c.sd_delta[i]) << ","
          << fmt4(c.asd[i]);
    out << "," << fmt4(c.mean_delta[rdim]) << "," << fmt4(c.sd_delta[rdim]) << ","
        << fmt4(c.asd[rdim]);
    out << "," << fmt4(c.kappa2_hat) << "," << fmt4(c.kappa1_bar) << "," << c.failures
        << "\n";
  }
}

inline void emit_table3_csv(const ExperimentResult& r, std::ofstream& out) {
  write_csv_header(out, r);
  out << "phi,n,m,component,ASD,SD";
  if (!r.cells.empty())
    for (long k : r.cells.front().k_n) out << ",kn=" << k;
  out << "\n";
  const std::size_t rdim = r.config.beta0.size();
  for (const auto& c : r.cells) {
    for (std::size_t comp = 0; comp <= rdim; ++comp) {
      const std::string name = comp < rdim ? "beta" + std::to_string(comp + 1) : "tau";
      out << fmt4(c.phi) << "," << c.n << "," << c.m_desc << "," << name << ","
          << fmt4(c.asd[comp]) << "," << fmt4(c.sd_delta[comp]);
      for (const auto& per_c : c.sub_mean_sd)
        out << "," << (comp < per_c.size() ? fmt4(per_c[comp]) : "nan");
      out << "\n";
    }
  }
}

}  // namespace detail

// One file per requested table under `dir`; returns the paths written.
inline std::vector<std::string> emit_tables(const ExperimentResult& r,
                                            const std::string& format,
                                            const std::string& dir) {
  if (format != "csv" && format != "json")
    throw std::invalid_argument("emit_tables: format must be csv or json");
  std::vector<std::string> written;
  std::filesystem::create_directories(dir);
  for (const auto& table : r.config.outputs) {
    if (table == "analytic") continue;  // written by the analytic entry point
    const std::string path = dir + "/" + table + "." + format;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("emit_tables: cannot write " + path);
    if (format == "json") {
      nlohmann::json j = result_to_json(r);
      j["table"] = table;
      out << j.dump(2) << "\n";
    } else if (table == "table1") {
      detail::emit_table1_csv(r, out);
    } else if (table == "table2") {
      detail::emit_table2_csv(r, out);
    } else if (table == "table3") {
      detail::emit_table3_csv(r, out);
    }
    if (!out) throw std::runtime_error("emit_tables: write failed for " + path);
    written.push_back(path);
  }
  return written;
}

}  // namespace binlat
