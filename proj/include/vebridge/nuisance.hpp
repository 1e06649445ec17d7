#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vebridge/data.hpp"
#include "vebridge/kde.hpp"
#include "vebridge/learners.hpp"

namespace vebridge {

//! Outcome regression m_s(a, w), clipped into [eps_m, 1-eps_m], with flat
//! extrapolation beyond the fitted w range.
struct RegressionFit {
  FittedLearner model;
  double eps_m = 1e-6;
  double w_lo = 0.0, w_hi = 1.0;
  std::string chosen;
  std::vector<double> cv_losses;
  bool degenerate = false;

  double operator()(int a, double w) const {
    double p = model.predict(a, std::clamp(w, w_lo, w_hi));
    return std::clamp(p, eps_m, 1.0 - eps_m);
  }
};

//! Propensity g_s(w) = P_s(A=1 | w), clipped into [eps_g, 1-eps_g].
struct PropensityFit {
  FittedLearner model;
  double eps_g = 0.01;
  double w_lo = 0.0, w_hi = 1.0;
  std::string chosen;
  std::vector<double> cv_losses;
  bool degenerate = false;

  double operator()(double w) const {
    double p = model.predict(0, std::clamp(w, w_lo, w_hi));
    return std::clamp(p, eps_g, 1.0 - eps_g);
  }
};

//! Density ratio dP_star/dP_s as a ratio of kernel density estimates on a
//! common (logit when the data live in the unit interval) scale, clipped
//! and then standardized so the trial-sample mean is one.
struct RatioFit {
  bool logit_scale = false;
  double w_lo = 0.0, w_hi = 1.0;  // flat extrapolation bounds (w scale)
  Kde1d star_kde, trial_kde;
  double clip_lo = 1e-3, clip_hi = 1e3;
  double standardization = 1.0;

  double transform(double w) const {
    double c = std::clamp(w, w_lo, w_hi);
    return logit_scale ? logit(c) : c;
  }
  //! Clipped ratio before standardization.
  double raw(double w) const {
    double t = transform(w);
    double num = star_kde(t), den = trial_kde(t);
    double r = den > 0.0 ? num / den : clip_hi;
    return std::clamp(r, clip_lo, clip_hi);
  }
  double operator()(double w) const { return raw(w) / standardization; }
};

struct TrialNuisances {
  RegressionFit m;
  PropensityFit g;
  RatioFit r;
};

struct NuisanceSet {
  std::vector<TrialNuisances> trials;
};

RegressionFit fit_outcome_regression(const LearnerData& trial, const std::vector<std::string>& library,
                                     int folds, double eps_m, std::uint64_t seed);

PropensityFit fit_propensity(const LearnerData& trial, const std::vector<std::string>& library,
                             int folds, double eps_g, std::uint64_t seed);

RatioFit fit_density_ratio(const std::vector<double>& star_w, const std::vector<double>& trial_w,
                           const std::vector<double>& trial_weight, const std::string& bandwidth_rule,
                           const ClipConfig& clips);

//! Fit all three nuisances for every trial. `trial_weights[s]` may be empty
//! (unit weights); otherwise it must align with the trial's records, zeros
//! marking unobserved biomarkers.
NuisanceSet fit_nuisances(const MultiTrialData& data,
                          const std::vector<std::vector<double>>& trial_weights,
                          const AnalysisConfig& cfg);

//! Reproducibility dump of the chosen learners and coefficients.
std::string nuisance_dump_json(const NuisanceSet& fits);

}  // namespace vebridge
