#pragma once

// Dataset (JSON Lines), configuration (JSON) and trial results (CSV).

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cpc/experiment.hpp"

namespace cpc {

inline constexpr const char* kDatasetFormat = "cpc-dataset";
inline constexpr int kDatasetVersion = 1;
inline constexpr const char* kFallCriterion =
    "fall when either link's absolute angle from vertical exceeds pi/2 "
    "(|q1| > pi/2 or |q1 + q2| > pi/2)";

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline void append_array(std::string& out, const Vec& v) {
  out += '[';
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += fmt17(v(i));
  }
  out += ']';
}

inline Vec to_vec(const nlohmann::json& j, const char* key, Eigen::Index n) {
  if (!j.contains(key) || !j[key].is_array()) {
    throw DatasetSchemaMismatch(std::string("missing array field '") + key + "'");
  }
  const auto& a = j[key];
  if (static_cast<Eigen::Index>(a.size()) != n) {
    throw DatasetSchemaMismatch(std::string("field '") + key + "' has wrong length");
  }
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = a[static_cast<std::size_t>(i)].get<double>();
  return v;
}

}  // namespace detail

struct DatasetHeader {
  int n_links = 2;
  std::vector<int> actuated_joints{1};
  double dt = 0.01;
};

inline std::string dataset_header_line(const DatasetHeader& h) {
  std::string out = "{\"format\":\"";
  out += kDatasetFormat;
  out += "\",\"version\":" + std::to_string(kDatasetVersion);
  out += ",\"n_links\":" + std::to_string(h.n_links);
  out += ",\"actuated_joints\":[";
  for (std::size_t i = 0; i < h.actuated_joints.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(h.actuated_joints[i]);
  }
  out += "],\"dt\":" + fmt17(h.dt);
  out += ",\"fall_criterion\":\"";
  out += kFallCriterion;
  out += "\"}";
  return out;
}

inline std::string datapoint_line(const DataPoint& p) {
  std::string out = "{\"t\":" + fmt17(p.t) + ",\"q\":";
  detail::append_array(out, p.x.q);
  out += ",\"qdot\":";
  detail::append_array(out, p.x.qdot);
  out += ",\"tau\":";
  detail::append_array(out, p.tau);
  out += ",\"G\":" + fmt17(p.G) + "}";
  return out;
}

inline void write_dataset(std::ostream& os, const DatasetHeader& h,
                          const std::vector<DataPoint>& points) {
  os << dataset_header_line(h) << '\n';
  for (const auto& p : points) os << datapoint_line(p) << '\n';
}

inline void write_dataset(const std::string& path, const DatasetHeader& h,
                          const std::vector<DataPoint>& points) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  write_dataset(f, h, points);
  f.flush();
  if (!f) throw IoError("write to '" + path + "' failed");
}

struct Dataset {
  DatasetHeader header;
  std::vector<DataPoint> points;
};

inline Dataset read_dataset(std::istream& is) {
  Dataset d;
  std::string line;
  if (!std::getline(is, line)) throw DatasetSchemaMismatch("empty dataset");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(line);
    if (h.at("format").get<std::string>() != kDatasetFormat) {
      throw DatasetSchemaMismatch("not a cpc dataset");
    }
    if (h.at("version").get<int>() != kDatasetVersion) {
      throw DatasetSchemaMismatch("unsupported dataset version");
    }
    d.header.n_links = h.at("n_links").get<int>();
    d.header.actuated_joints = h.at("actuated_joints").get<std::vector<int>>();
    d.header.dt = h.at("dt").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw DatasetSchemaMismatch(std::string("bad header: ") + e.what());
  }
  const Eigen::Index n = d.header.n_links;
  const auto m = static_cast<Eigen::Index>(d.header.actuated_joints.size());
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      DataPoint p;
      p.t = j.at("t").get<double>();
      p.x.q = detail::to_vec(j, "q", n);
      p.x.qdot = detail::to_vec(j, "qdot", n);
      p.x.t = p.t;
      p.tau = detail::to_vec(j, "tau", m);
      p.G = j.at("G").get<double>();
      d.points.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw DatasetSchemaMismatch("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return d;
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  return read_dataset(f);
}

inline void check_dataset_matches(const Dataset& d, const ChainParams& chain) {
  if (d.header.n_links != chain.n_links || d.header.actuated_joints != chain.actuated_joints) {
    throw DatasetSchemaMismatch("dataset chain layout differs from the configured chain");
  }
  if (d.points.empty()) throw EmptyDataset("dataset has no points");
}

inline DatasetHeader header_for(const ExperimentConfig& cfg) {
  return {cfg.chain.n_links, cfg.chain.actuated_joints, cfg.controller.dt};
}

// ---- configuration -------------------------------------------------------

namespace detail {

template <class T>
void take(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known,
                           const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return it.key() == k; })) {
      throw InvalidArgument("unknown config key '" + where + it.key() + "'");
    }
  }
}

}  // namespace detail

inline void apply_config(const nlohmann::json& j, ExperimentConfig& cfg) {
  if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
  try {
    detail::reject_unknown(j,
                           {"sigma0", "fall_duration", "T_max", "trials", "noise_multiplier",
                            "n_f_list", "master_seed", "threads", "regress_on_applied_torque",
                            "controller"},
                           "");
    detail::take(j, "sigma0", cfg.sigma0);
    detail::take(j, "fall_duration", cfg.fall_duration);
    detail::take(j, "T_max", cfg.T_max);
    detail::take(j, "trials", cfg.trials);
    detail::take(j, "noise_multiplier", cfg.noise_multiplier);
    detail::take(j, "n_f_list", cfg.n_f_list);
    detail::take(j, "master_seed", cfg.master_seed);
    detail::take(j, "threads", cfg.threads);
    detail::take(j, "regress_on_applied_torque", cfg.regress_on_applied_torque);
    if (j.contains("controller")) {
      const auto& c = j.at("controller");
      auto& cc = cfg.controller;
      detail::reject_unknown(c,
                             {"omega", "s_g", "n_d", "k0", "tau_c", "k_c", "dt", "history_n",
                              "guard_tol", "ridge", "affine_regression", "sigma_boot",
                              "zero_reference", "T_gamma"},
                             "controller.");
      detail::take(c, "omega", cc.omega);
      detail::take(c, "s_g", cc.s_g);
      detail::take(c, "n_d", cc.n_d);
      detail::take(c, "k0", cc.k0);
      detail::take(c, "tau_c", cc.tau_c);
      detail::take(c, "k_c", cc.k_c);
      detail::take(c, "dt", cc.dt);
      detail::take(c, "history_n", cc.history_n);
      detail::take(c, "guard_tol", cc.guard_tol);
      detail::take(c, "ridge", cc.ridge);
      detail::take(c, "affine_regression", cc.affine_regression);
      detail::take(c, "sigma_boot", cc.sigma_boot);
      detail::take(c, "zero_reference", cc.zero_reference);
      detail::take(c, "T_gamma", cc.reward.T_gamma);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("bad config value: ") + e.what());
  }
  cfg.validate();
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config '" + path + "'");
  ExperimentConfig cfg;
  try {
    apply_config(nlohmann::json::parse(f), cfg);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidArgument(std::string("config is not valid JSON: ") + e.what());
  }
  return cfg;
}

// ---- results ---------------------------------------------------------------

inline void write_results_header(std::ostream& os, const ExperimentConfig& cfg) {
  os << "# fall_criterion: " << kFallCriterion << '\n';
  os << "# T_max: " << fmt17(cfg.T_max) << " sigma0: " << fmt17(cfg.sigma0)
     << " master_seed: " << cfg.master_seed << '\n';
  os << "n_f,trial_id,seed,t_f\n";
}

/// Trial rows sorted by trial_id, followed by one summary row with the mean.
inline void write_trial_rows(std::ostream& os, std::vector<TrialRecord> recs, double T_max) {
  if (recs.empty()) return;
  std::sort(recs.begin(), recs.end(),
            [](const TrialRecord& a, const TrialRecord& b) { return a.trial_id < b.trial_id; });
  for (const auto& r : recs) {
    os << r.n_f << ',' << r.trial_id << ',' << r.seed << ',' << fmt17(r.t_f) << '\n';
  }
  const double mean = mean_fall_time(recs);
  os << recs.front().n_f << ",mean,," << fmt17(mean) << '\n';
  os << "# n_f " << recs.front().n_f << " unstable_fraction " << fmt17((T_max - mean) / T_max)
     << '\n';
}

inline void write_sweep_csv(std::ostream& os, const ExperimentConfig& cfg,
                            const std::vector<SweepPoint>& sweep) {
  write_results_header(os, cfg);
  for (const auto& p : sweep) write_trial_rows(os, p.trials, cfg.T_max);
}

struct CsvTrialRow {
  int n_f = 0;
  int trial_id = -1;  // -1 for the summary row
  std::uint64_t seed = 0;
  double t_f = 0.0;
};

inline std::vector<CsvTrialRow> parse_trial_csv(std::istream& is) {
  std::vector<CsvTrialRow> rows;
  std::string line;
  bool header_seen = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != "n_f,trial_id,seed,t_f") throw DatasetSchemaMismatch("unexpected CSV header");
      header_seen = true;
      continue;
    }
    std::stringstream ss(line);
    std::string f[4];
    for (auto& s : f) std::getline(ss, s, ',');
    CsvTrialRow r;
    try {
      r.n_f = std::stoi(f[0]);
      r.trial_id = f[1] == "mean" ? -1 : std::stoi(f[1]);
      r.seed = f[2].empty() ? 0 : std::stoull(f[2]);
      r.t_f = std::stod(f[3]);
    } catch (const std::exception&) {
      throw DatasetSchemaMismatch("bad CSV row: " + line);
    }
    rows.push_back(r);
  }
  return rows;
}

}  // namespace cpc
