#include "vebridge/cli.hpp"

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "vebridge/bridge.hpp"
#include "vebridge/data.hpp"
#include "vebridge/errors.hpp"
#include "vebridge/monotone.hpp"
#include "vebridge/simgen.hpp"
#include "vebridge/twophase.hpp"

namespace vebridge {

namespace {

using nlohmann::ordered_json;

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Err::ConfigError, "cannot open output file: " + path);
  out << text;
}

ordered_json theta_json(double theta) {
  if (theta == kInf) return "+inf";
  if (theta == -kInf) return "-inf";
  return theta;
}

ordered_json estimate_json(const BridgeEstimate& est, bool with_gradients) {
  ordered_json j;
  j["mu"] = est.mu;
  j["phi_hat"] = est.phi;
  j["omega_hat"] = est.omega;
  j["gamma_hat"] = est.gamma;
  j["theta_hat"] = theta_json(est.alloc.theta);
  j["eta_hat"] = est.alloc.eta;
  j["case"] = case_name(est.alloc.tag);
  if (est.monotone) {
    j["monotone"] = true;
    j["theta_w_hat"] = theta_json(est.theta_w);
  }
  j["sigma_s2"] = est.sigma2;
  j["sigma_n"] = est.sigma_n;
  j["lcb"] = est.lcb;
  j["omega_beta0"] = est.alloc.omega_beta0;
  j["omega_beta1"] = est.alloc.omega_beta1;
  j["interior_gradient"] = est.interior_gradient;
  j["diagnostics"] = {{"omega_gap", est.omega_gap}, {"score_residual", est.score_residual}};
  j["flags"] = {{"phi_out_of_bounds", est.phi_flag},
                {"envelope_out_of_unit_range", est.envelope_flag},
                {"fluctuation_diverged", est.fluctuation_diverged}};
  if (with_gradients) {
    j["grad_star"] = est.grad_star;
    j["grad_trials"] = est.grad_trial;
  }
  return j;
}

ordered_json curve_json(const CurveResult& res) {
  ordered_json j;
  j["rows"] = ordered_json::array();
  for (const auto& row : res.rows) {
    if (!row.ok) {
      j["rows"].push_back({{"mu", row.mu}, {"error", row.error}});
      continue;
    }
    j["rows"].push_back(estimate_json(row.est, false));
  }
  // pointwise minimum over the grid; not a simultaneous band
  j["min_lcb"] = res.min_lcb;
  j["min_lcb_interpretation"] = "pointwise";
  return j;
}

struct CommonOpts {
  std::string data_path, config_path, out_path, json_path;
  std::string preset;
  std::vector<double> mu_values;
  std::optional<std::uint64_t> seed;
  std::string monotone;  // "", "increasing", "decreasing"
  bool two_phase = false;
  bool adaptive = false;
  bool gradients = false;
  int threads = 1;
};

AnalysisConfig resolve_config(const CommonOpts& opt) {
  AnalysisConfig cfg;
  bool have = false;
  if (!opt.preset.empty()) {
    cfg = preset_config(preset_from_string(opt.preset), opt.seed.value_or(1));
    have = true;
  }
  if (!opt.config_path.empty()) {
    cfg = load_config(opt.config_path);
    have = true;
  }
  if (!have) fail(Err::ConfigError, "provide --config or --preset");
  if (opt.seed) cfg.seed = *opt.seed;
  if (!opt.mu_values.empty()) cfg.mu_grid = opt.mu_values;
  validate_analysis_config(cfg);
  return cfg;
}

int cmd_simulate(const CommonOpts& opt, const std::string& size, int ncc_ratio, bool two_phase) {
  SampleSizes sz = sizes_for(size_from_string(size));
  Rng rng(derive_seed(opt.seed.value_or(1), rngstream::kDgp, 0));
  MultiTrialData data = generate_dataset(sz, rng, two_phase);
  if (two_phase) {
    data.two_phase = true;
    for (std::size_t s = 0; s < data.trials.size(); ++s) {
      Rng ncc_rng(derive_seed(opt.seed.value_or(1), rngstream::kNcc, s));
      data.trials[s] = nested_case_control_sample(data.trials[s], ncc_ratio, ncc_rng);
    }
  }
  write_file(opt.out_path, serialize_trials(data));
  return 0;
}

int cmd_fit(const CommonOpts& opt) {
  AnalysisConfig cfg = resolve_config(opt);
  if (cfg.mu_grid.empty()) fail(Err::ConfigError, "fit needs --mu (or mu_grid in the config)");
  MultiTrialData data = load_trials(opt.data_path);
  FittedPipeline pipe = fit_pipeline(data, cfg, opt.two_phase);

  ordered_json out;
  out["command"] = opt.two_phase ? "twophase" : "fit";
  out["n"] = {{"star", data.n_star()}};
  for (const auto& t : data.trials) out["n"]["trial_" + t.id] = t.size();
  MuFeasibleRange fr = mu_feasible_range(pipe.ctx);
  out["mu_feasible"] = {
      {"lo", fr.lo}, {"hi", fr.hi}, {"lo_lcb", fr.lo_lcb}, {"hi_ucb", fr.hi_ucb}};
  out["estimates"] = ordered_json::array();
  for (double mu : cfg.mu_grid) {
    BridgeEstimate est;
    if (!opt.monotone.empty()) {
      if (opt.monotone != "increasing" && opt.monotone != "decreasing")
        fail(Err::ConfigError, "--monotone takes increasing or decreasing");
      est = phi_estimate_monotone(pipe.ctx, mu, opt.monotone == "increasing");
    } else if (opt.adaptive) {
      AdaptiveResult ad = adaptive_weights(pipe.ctx, mu, cfg.adaptive_resolution,
                                           cfg.assume_constant_ve);
      ordered_json ej = estimate_json(ad.estimate, opt.gradients);
      ej["adaptive_weights"] = ad.weights;
      ej["sigma2_selected"] = ad.sigma2_selected;
      ej["sigma2_uniform"] = ad.sigma2_uniform;
      out["estimates"].push_back(ej);
      continue;
    } else {
      est = phi_estimate(pipe.ctx, mu);
    }
    out["estimates"].push_back(estimate_json(est, opt.gradients));
  }
  out["nuisance_dump"] = ordered_json::parse(nuisance_dump_json(pipe.nuisances));
  write_file(opt.out_path, out.dump(2) + "\n");
  return 0;
}

int cmd_curve(const CommonOpts& opt) {
  AnalysisConfig cfg = resolve_config(opt);
  if (cfg.mu_grid.empty()) fail(Err::ConfigError, "curve needs --mu-grid (or mu_grid in config)");
  MultiTrialData data = load_trials(opt.data_path);
  FittedPipeline pipe = fit_pipeline(data, cfg, opt.two_phase);
  CurveResult res = curve(pipe.ctx, cfg.mu_grid, opt.threads);
  write_file(opt.out_path, curve_csv(res));
  if (!opt.json_path.empty()) write_file(opt.json_path, curve_json(res).dump(2) + "\n");
  return 0;
}

int cmd_oracle(const CommonOpts& opt, const std::string& preset) {
  Preset p = preset_from_string(preset);
  std::ostringstream os;
  os << "preset,mu,true_phi,true_mu,target_marginal_ve\n";
  double mu0 = true_mu(p);
  double psi = true_target_marginal_ve(p);
  std::vector<double> grid = opt.mu_values.empty() ? std::vector<double>{mu0} : opt.mu_values;
  char buf[160];
  for (double mu : grid) {
    double phi = true_phi_oracle(p, mu);
    std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%.17g,%.17g\n", preset.c_str(), mu, phi, mu0,
                  psi);
    os << buf;
  }
  write_file(opt.out_path, os.str());
  return 0;
}

int cmd_experiment(const CommonOpts& opt, const std::string& preset, const std::string& size,
                   const std::string& variant, int reps, int ncc_ratio) {
  DgpSpec spec;
  spec.preset = preset_from_string(preset);
  spec.size = size_from_string(size);
  spec.variant = variant_from_string(variant);
  spec.replications = reps;
  spec.seed = opt.seed.value_or(1);
  spec.mu_grid = opt.mu_values;
  spec.threads = opt.threads;
  spec.ncc_ratio = ncc_ratio;
  ExperimentReport report = run_experiment(spec);
  write_file(opt.out_path + ".csv", experiment_csv(report));
  write_file(opt.out_path + ".json", experiment_json(report) + "\n");
  return report.error_flag ? 2 : 0;
}

}  // namespace

int run_command(const std::vector<std::string>& args) {
  CLI::App app{"partial bridging of vaccine efficacy to a new population"};
  app.require_subcommand(1);

  CommonOpts opt;
  std::string size = "smaller", preset, variant = "fixed";
  int reps = 200, ncc_ratio = 1;
  bool sim_two_phase = false;

  auto add_common = [&](CLI::App* cmd, bool needs_data) {
    if (needs_data) cmd->add_option("--data", opt.data_path, "input CSV")->required();
    cmd->add_option("--config", opt.config_path, "analysis config JSON");
    cmd->add_option("--preset", opt.preset, "built-in bounds preset (loosest|moderate|tight)");
    cmd->add_option("--out", opt.out_path, "output path")->required();
    cmd->add_option("--seed", opt.seed, "master seed");
    cmd->add_option("--threads", opt.threads, "worker threads");
  };

  CLI::App* sim = app.add_subcommand("simulate", "draw a dataset from the study design");
  sim->add_option("--size", size, "smaller|larger");
  sim->add_option("--out", opt.out_path, "output CSV")->required();
  sim->add_option("--seed", opt.seed, "master seed");
  sim->add_flag("--two-phase", sim_two_phase, "apply 1:1 case-control biomarker sampling");
  sim->add_option("--ratio", ncc_ratio, "controls sampled per case");

  CLI::App* fit = app.add_subcommand("fit", "estimate the efficacy lower bound at given mu");
  add_common(fit, true);
  fit->add_option("--mu", opt.mu_values, "marginal unvaccinated risk value(s)");
  fit->add_option("--monotone", opt.monotone, "threshold on the biomarker: increasing|decreasing");
  fit->add_flag("--two-phase", opt.two_phase, "inverse-probability weighting for missing w");
  fit->add_flag("--adaptive", opt.adaptive, "variance-minimizing convex weights");
  fit->add_flag("--gradients", opt.gradients, "include per-observation gradients in the output");

  CLI::App* crv = app.add_subcommand("curve", "lower-bound curve over a mu grid");
  add_common(crv, true);
  crv->add_option("--mu-grid", opt.mu_values, "mu grid values");
  crv->add_option("--json", opt.json_path, "also write the curve as JSON");
  crv->add_flag("--two-phase", opt.two_phase, "inverse-probability weighting for missing w");

  CLI::App* ada = app.add_subcommand("adaptive", "fit with adaptive convex weights");
  add_common(ada, true);
  ada->add_option("--mu", opt.mu_values, "marginal unvaccinated risk value(s)");
  ada->add_flag("--two-phase", opt.two_phase, "inverse-probability weighting for missing w");
  ada->add_flag("--gradients", opt.gradients, "include per-observation gradients in the output");

  CLI::App* twp = app.add_subcommand("twophase", "IPCW fit for two-phase biomarker sampling");
  add_common(twp, true);
  twp->add_option("--mu", opt.mu_values, "marginal unvaccinated risk value(s)");
  twp->add_flag("--gradients", opt.gradients, "include per-observation gradients in the output");

  CLI::App* exp = app.add_subcommand("experiment", "Monte Carlo coverage experiment");
  exp->add_option("--preset", preset, "loosest|moderate|tight")->required();
  exp->add_option("--size", size, "smaller|larger");
  exp->add_option("--variant", variant, "fixed|adaptive|two_phase_known|two_phase_estimated");
  exp->add_option("--reps", reps, "Monte Carlo replications");
  exp->add_option("--mu", opt.mu_values, "mu values (default: true marginal risk)");
  exp->add_option("--out", opt.out_path, "output prefix (.csv/.json appended)")->required();
  exp->add_option("--seed", opt.seed, "master seed");
  exp->add_option("--threads", opt.threads, "worker threads");
  exp->add_option("--ratio", ncc_ratio, "controls sampled per case");

  CLI::App* orc = app.add_subcommand("oracle", "exact lower-bound values for a preset");
  orc->add_option("--preset", preset, "loosest|moderate|tight")->required();
  orc->add_option("--mu", opt.mu_values, "mu values (default: true marginal risk)");
  orc->add_option("--out", opt.out_path, "output CSV")->required();

  std::vector<std::string> argv_copy = args;
  try {
    std::vector<const char*> argv;
    argv.push_back("vebridge");
    for (const auto& a : argv_copy) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      std::cout << app.help() << std::flush;
      return 0;
    }
    nlohmann::ordered_json err{{"error", "UsageError"}, {"message", e.what()}};
    std::cerr << err.dump() << "\n" << app.help();
    return 1;
  }

  try {
    if (sim->parsed()) return cmd_simulate(opt, size, ncc_ratio, sim_two_phase);
    if (fit->parsed()) return cmd_fit(opt);
    if (crv->parsed()) return cmd_curve(opt);
    if (ada->parsed()) {
      opt.adaptive = true;
      return cmd_fit(opt);
    }
    if (twp->parsed()) {
      opt.two_phase = true;
      return cmd_fit(opt);
    }
    if (exp->parsed()) return cmd_experiment(opt, preset, size, variant, reps, ncc_ratio);
    if (orc->parsed()) return cmd_oracle(opt, preset);
    fail(Err::ConfigError, "no subcommand given");
  } catch (const Error& e) {
    nlohmann::ordered_json err{{"error", err_name(e.code())}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return is_input_error(e.code()) ? 1 : 2;
  } catch (const std::exception& e) {
    nlohmann::ordered_json err{{"error", "RuntimeError"}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace vebridge
