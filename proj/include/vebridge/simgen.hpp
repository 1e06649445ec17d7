#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vebridge/data.hpp"
#include "vebridge/rng.hpp"

namespace vebridge {

enum class Preset { Loosest, Moderate, Tight };
enum class SizeSetting { Smaller, Larger };

const char* preset_name(Preset p);
const char* size_name(SizeSetting s);
Preset preset_from_string(const std::string& s);
SizeSetting size_from_string(const std::string& s);

//! Sample sizes (n_star, n_1, n_2) for the two study settings.
struct SampleSizes {
  std::size_t n_star, n1, n2;
};
SampleSizes sizes_for(SizeSetting s);

// data-generating process primitives (two completed trials, one target)
double dgp_ve(double w);
double dgp_control_risk(int trial, double w);  // trial in {1, 2}
double dgp_w(int population, double z);        // population 0 = target

std::vector<double> generate_star(std::size_t n, Rng& rng);
TrialSample generate_trial(int population, std::size_t n, Rng& rng, bool with_aux);
MultiTrialData generate_dataset(const SampleSizes& sz, Rng& rng, bool with_aux);

//! Bounds and analysis defaults for a study preset (fixed v = (1/2, 1/2)).
BoundsSpec preset_bounds(Preset p);
AnalysisConfig preset_config(Preset p, std::uint64_t seed);

// exact (quadrature) functionals of the data-generating process
double true_mu(Preset p);                 // marginal unvaccinated risk of the target law
double true_target_marginal_ve(Preset p); // marginal efficacy of the target law
double true_phi_oracle(Preset p, double mu);
double true_e_lambda(Preset p);
double true_e_upsilon(Preset p);

//! Monte Carlo cross-check of the quadrature oracle via the discrete
//! population evaluator on a large simulated support.
double true_phi_oracle_mc(Preset p, double mu, std::size_t draws, std::uint64_t seed);

enum class Variant { Fixed, Adaptive, TwoPhaseKnown, TwoPhaseEstimated };
const char* variant_name(Variant v);
Variant variant_from_string(const std::string& s);

struct DgpSpec {
  Preset preset = Preset::Moderate;
  SizeSetting size = SizeSetting::Smaller;
  Variant variant = Variant::Fixed;
  int replications = 200;
  std::uint64_t seed = 1;
  std::vector<double> mu_grid;  // empty: evaluate at the true marginal risk
  int threads = 1;
  int ncc_ratio = 1;
};

struct ReplicationRecord {
  bool ok = false;
  std::string error;
  std::vector<double> phi, lcb, sigma_n;  // per mu
  std::vector<double> sigma2_uniform, sigma2_adaptive, lcb_uniform;  // adaptive variant
  std::vector<double> phi_full;  // full-data companion run (two-phase variants)
};

struct ExperimentRow {
  std::string setting, preset, variant;
  double mu = 0.0;
  double coverage = 0.0;
  double avg_phi = 0.0;
  double avg_lcb = 0.0;
  double true_phi = 0.0;
  double mc_se = 0.0;
  int failures = 0;
  double var_ratio = 0.0;  // two-phase vs full-data Monte Carlo variance
};

struct ExperimentReport {
  DgpSpec spec;
  std::vector<double> mu_grid;
  std::vector<ExperimentRow> rows;
  std::vector<ReplicationRecord> reps;
  bool error_flag = false;
};

ExperimentReport run_experiment(const DgpSpec& spec);
std::string experiment_csv(const ExperimentReport& report);
std::string experiment_json(const ExperimentReport& report);

}  // namespace vebridge
