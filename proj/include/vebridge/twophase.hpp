#pragma once

#include "vebridge/bridge.hpp"
#include "vebridge/data.hpp"
#include "vebridge/rng.hpp"

namespace vebridge {

//! Estimated observation mechanism for one trial: raw probabilities,
//! the trial standardization constant, and the resulting record weights
//! delta / (pi * c) with sum_i delta_i / (pi_i * c) = n_s.
struct CensoringFit {
  std::vector<double> pi;       // clipped to (0, 1]
  std::vector<double> weights;  // zero where delta = 0
  double standardization = 1.0;
  bool all_observed = false;
};

CensoringFit fit_censoring(const TrialSample& trial, const CensoringConfig& cfg,
                           std::size_t trial_index);

std::vector<CensoringFit> fit_censoring_all(const MultiTrialData& data,
                                            const CensoringConfig& cfg);

//! Case-control subsampling of the biomarker: observed on every case and
//! on a without-replacement sample of ratio * #cases controls (clamped to
//! the controls available); w is erased on unselected records.
TrialSample nested_case_control_sample(const TrialSample& full, int ratio_per_case, Rng& rng);

//! Bounds + censoring + nuisances + fluctuation, full-data or IPCW.
struct FittedPipeline {
  ValidatedBounds bounds;
  NuisanceSet nuisances;
  std::vector<CensoringFit> censoring;  // empty in full-data mode
  BridgeContext ctx;
};

FittedPipeline fit_pipeline(const MultiTrialData& data, const AnalysisConfig& cfg,
                            bool two_phase);

//! Appendix-style IPCW estimate at one mu (weighted nuisances, weighted
//! fluctuation, weighted corrections and gradients). With delta identically
//! one this reproduces the full-data estimator bitwise.
BridgeEstimate ipcw_estimate(const MultiTrialData& data, const AnalysisConfig& cfg, double mu);

}  // namespace vebridge
