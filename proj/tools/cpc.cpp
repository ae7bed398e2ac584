// Command-line front end: fall data, balance trials, N_f sweeps, the
// tracking demo and the verification suites.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cpc/experiment.hpp"
#include "cpc/io.hpp"
#include "cpc/track_demo.hpp"
#include "cpc/verify.hpp"

namespace {

struct Common {
  std::string config;
  int n_falls = 100;
  std::vector<int> n_f_list;
  double noise_mult = -1.0;
  double t_max = -1.0;
  int trials = -1;
  long long seed = -1;
  int threads = -1;
  std::string out;
};

cpc::ExperimentConfig resolve(const Common& c) {
  cpc::ExperimentConfig cfg = c.config.empty() ? cpc::ExperimentConfig{} : cpc::load_config(c.config);
  if (c.noise_mult >= 0.0) cfg.noise_multiplier = c.noise_mult;
  if (c.t_max > 0.0) cfg.T_max = c.t_max;
  if (c.trials > 0) cfg.trials = c.trials;
  if (c.seed >= 0) cfg.master_seed = static_cast<std::uint64_t>(c.seed);
  if (c.threads >= 0) cfg.threads = c.threads;
  if (!c.n_f_list.empty()) cfg.n_f_list = c.n_f_list;
  cfg.validate();
  return cfg;
}

void add_config(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON configuration file")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "master seed");
}

void add_trial_flags(CLI::App* app, Common& c) {
  app->add_option("--noise-mult", c.noise_mult, "disturbance std in units of sigma0");
  app->add_option("--t-max", c.t_max, "observation window (s)");
  app->add_option("--trials", c.trials, "trials per point");
  app->add_option("--threads", c.threads, "worker threads (0: all cores)");
}

/// Writes to path, or stdout for "-" / empty.
template <class F>
void emit(const std::string& path, F&& write) {
  if (path.empty() || path == "-") {
    write(std::cout);
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw cpc::IoError("cannot open '" + path + "' for writing");
  write(f);
  f.flush();
  if (!f) throw cpc::IoError("write to '" + path + "' failed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Configuration path control for underactuated chains"};
  app.require_subcommand(1);
  Common c;

  auto* gen = app.add_subcommand("generate-falls", "record uncontrolled falls as JSON Lines");
  add_config(gen, c);
  gen->add_option("--n-falls", c.n_falls, "number of fall trajectories")->check(CLI::PositiveNumber);
  gen->add_option("--out", c.out, "dataset path")->required();

  std::string dataset;
  auto* bal = app.add_subcommand("balance", "balance trials against a fixed dataset");
  add_config(bal, c);
  add_trial_flags(bal, c);
  bal->add_option("--dataset", dataset, "dataset from generate-falls")
      ->required()
      ->check(CLI::ExistingFile);
  bal->add_option("--out", c.out, "results CSV (default stdout)");

  auto* sw = app.add_subcommand("sweep", "fall time against N_f, data resampled per trial");
  add_config(sw, c);
  add_trial_flags(sw, c);
  sw->add_option("--n-falls", c.n_f_list, "N_f values, comma separated")->delimiter(',');
  sw->add_option("--out", c.out, "results CSV (default stdout)");

  cpc::TrackConfig track;
  std::string trace;
  auto* td = app.add_subcommand("track-demo", "computed-torque tracking on a fully actuated chain");
  td->add_option("--kappa", track.kappa, "feedback rate (1/s)");
  td->add_option("--perturbation", track.perturbation, "initial joint offset (rad)");
  td->add_option("--out", trace, "optional CSV trace of error and envelope");

  cpc::VerifyOptions vopt;
  auto* ver = app.add_subcommand("verify", "run the property suites");
  ver->add_option("--seed", vopt.seed, "seed of the random instances");
  ver->add_flag("--mutate-b-sign", vopt.mutate_b_sign,
                "negate b inside the loss bounds (the sandwich suite should fail)");
  ver->add_option("--out", vopt.csv_dir, "directory for epsilon-sweep CSV files");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const auto cfg = resolve(c);
      const auto seed = cpc::derive_seed(cfg.master_seed, "generate-falls", 0);
      const auto points = cpc::generate_falls(cfg, c.n_falls, seed);
      cpc::write_dataset(c.out, cpc::header_for(cfg), points);
      std::cerr << "wrote " << points.size() << " points to " << c.out << '\n';
      return 0;
    }
    if (*bal) {
      const auto cfg = resolve(c);
      auto data = cpc::read_dataset(dataset);
      cpc::check_dataset_matches(data, cfg.chain);
      const std::size_t per_fall = static_cast<std::size_t>(cfg.points_per_fall());
      const int n_f = static_cast<int>(data.points.size() / std::max<std::size_t>(1, per_fall));
      const cpc::BallTree store(std::move(data.points));
      const auto recs = cpc::run_trials_on(store, cfg, n_f, cfg.noise_multiplier * cfg.sigma0,
                                           "balance");
      emit(c.out, [&](std::ostream& os) {
        cpc::write_results_header(os, cfg);
        cpc::write_trial_rows(os, recs, cfg.T_max);
      });
      std::cerr << "mean t_f " << cpc::mean_fall_time(recs) << " s over " << recs.size()
                << " trials\n";
      return 0;
    }
    if (*sw) {
      const auto cfg = resolve(c);
      const auto sweep = cpc::sweep_nf(cfg);
      emit(c.out, [&](std::ostream& os) { cpc::write_sweep_csv(os, cfg, sweep); });
      for (const auto& p : sweep) {
        std::cerr << "n_f " << p.n_f << ": mean t_f " << p.mean_t_f << " s, unstable fraction "
                  << p.unstable_fraction << '\n';
      }
      return 0;
    }
    if (*td) {
      const auto rep = cpc::track_demo(track, !trace.empty());
      cpc::TrackConfig on_ref = track;
      on_ref.perturbation = 0.0;
      const auto ref = cpc::track_demo(on_ref);
      std::cout << "on-reference max error " << ref.max_error << '\n'
                << "perturbed start: max deviation from (1 + kappa t) e^(-kappa t) envelope "
                << 100.0 * rep.max_envelope_rel << "%, final error " << rep.final_error << '\n';
      if (!trace.empty()) {
        emit(trace, [&](std::ostream& os) {
          os << "t,error,envelope\n";
          for (std::size_t i = 0; i < rep.t.size(); ++i) {
            os << cpc::fmt17(rep.t[i]) << ',' << cpc::fmt17(rep.error[i]) << ','
               << cpc::fmt17(rep.envelope[i]) << '\n';
          }
        });
      }
      return ref.max_error < 1e-6 && rep.max_envelope_rel <= 0.02 ? 0 : 1;
    }
    if (*ver) {
      const auto results = cpc::run_verify(vopt, &std::cout);
      for (const auto& r : results)
        if (!r.pass) return 1;
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
