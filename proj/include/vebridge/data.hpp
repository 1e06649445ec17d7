#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "vebridge/pwlinear.hpp"

namespace vebridge {

//! One trial participant. `w` is absent exactly when the record was not
//! selected into the biomarker subsample (delta = 0).
struct ObservationRecord {
  std::optional<double> w;
  int a = 0;
  int y = 0;
  std::optional<int> delta;
  std::optional<double> l;

  bool observed() const { return !delta.has_value() || *delta == 1; }

  bool operator==(const ObservationRecord&) const = default;
};

struct TrialSample {
  std::string id;
  std::vector<ObservationRecord> records;

  std::size_t size() const { return records.size(); }
};

//! The S+1 samples: biomarker-only draws from the target population plus
//! one (W, A, Y) sample per completed trial.
struct MultiTrialData {
  std::vector<double> star_w;
  std::vector<TrialSample> trials;
  bool two_phase = false;

  std::size_t n_star() const { return star_w.size(); }
  std::size_t num_trials() const { return trials.size(); }

  std::size_t n_min() const {
    std::size_t m = star_w.size();
    for (const auto& t : trials) m = std::min(m, t.size());
    return m;
  }
};

//! Column mapping for CSV ingestion; defaults match the documented schema
//! `trial_id,w,a,y[,delta,l]`.
struct CsvSchema {
  std::string trial_id = "trial_id";
  std::string w = "w";
  std::string a = "a";
  std::string y = "y";
  std::string delta = "delta";
  std::string l = "l";
  std::string star_label = "star";
};

MultiTrialData load_trials(const std::string& path, const CsvSchema& schema = {});
MultiTrialData parse_trials_csv(std::istream& in, const CsvSchema& schema = {});

//! Inverse of load_trials: writes a CSV that parses back to identical records.
void serialize_trials(const MultiTrialData& data, std::ostream& out, const CsvSchema& schema = {});
std::string serialize_trials(const MultiTrialData& data, const CsvSchema& schema = {});

//! User-specified bounds: per-source weight functions for the unvaccinated
//! risk envelope and the efficacy floor, pseudo-trial risks, and the
//! minimum envelope separation. Index 0 is the pseudo-trial; indices
//! 1..S line up with MultiTrialData::trials.
struct BoundsSpec {
  std::vector<BoundFunc> ell;  // lower-envelope weights, size S+1
  std::vector<BoundFunc> uu;   // upper-envelope weights, size S+1
  std::vector<BoundFunc> vv;   // efficacy-floor convex weights, size S+1
  BoundFunc d0{0.0};           // pseudo-trial unvaccinated risk
  BoundFunc d1{0.0};           // pseudo-trial vaccinated risk
  double delta_min = 1e-6;

  std::size_t num_sources() const { return vv.size(); }  // S+1
};

enum class FluctuationPath { Univariate, Bivariate };

//! BoundsSpec annotated with which fluctuation applies: the single-covariate
//! update when every ell_s is the same constant multiple of uu_s (or all
//! ell_s vanish), the two-covariate update otherwise.
struct ValidatedBounds {
  BoundsSpec spec;
  FluctuationPath path = FluctuationPath::Univariate;
  double path_multiple = 0.0;  // c with ell_s = c * uu_s on the univariate path
};

ValidatedBounds validate_bounds(const BoundsSpec& spec, const MultiTrialData& data);

//! Grid the convexity/pseudo-risk checks run on: union of observed w.
std::vector<double> validation_grid(const MultiTrialData& data);

struct ClipConfig {
  double m_eps = 1e-6;     // outcome-regression clip
  double g_eps = 0.01;     // propensity clip
  double ratio_lo = 1e-3;  // density-ratio clips
  double ratio_hi = 1e3;
  double ve_floor = -10.0;  // lower truncation of the fitted efficacy curve
};

struct LearnerConfig {
  std::vector<std::string> outcome{"intercept", "linear", "interaction", "quadratic", "spline"};
  std::vector<std::string> propensity{"intercept", "linear"};
};

enum class CensoringMode { Estimate, KnownNcc, KnownValues };

struct CensoringConfig {
  CensoringMode mode = CensoringMode::Estimate;
  // KnownValues: per-trial observation probabilities by case status
  std::vector<double> case_pi;
  std::vector<double> control_pi;
};

struct AnalysisConfig {
  BoundsSpec bounds;
  std::vector<double> mu_grid;
  double z = 1.64;
  LearnerConfig learners;
  int folds = 5;
  ClipConfig clips;
  std::uint64_t seed = 1;
  bool assume_constant_ve = false;  // condition B5 declared by the user
  int adaptive_resolution = 20;
  CensoringConfig censoring;
};

//! Parse the single-document JSON config (keys: bounds, mu_grid, z,
//! learners, folds, clips, seed, ...). Errors carry JSON pointer paths.
AnalysisConfig parse_config_json(const std::string& text);
AnalysisConfig load_config(const std::string& path);

void validate_analysis_config(const AnalysisConfig& cfg);

}  // namespace vebridge
