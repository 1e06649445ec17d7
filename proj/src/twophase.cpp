#include "vebridge/twophase.hpp"

#include <algorithm>
#include <cmath>

#include "vebridge/errors.hpp"
#include "vebridge/learners.hpp"
#include "vebridge/nuisance.hpp"

namespace vebridge {

namespace {

constexpr double kPiFloor = 1e-6;

void standardize(CensoringFit& fit, const TrialSample& trial) {
  const double n = static_cast<double>(trial.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < trial.records.size(); ++i) {
    const auto& rec = trial.records[i];
    if (rec.observed()) sum += 1.0 / fit.pi[i];
  }
  fit.standardization = sum > 0.0 ? sum / n : 1.0;
  fit.weights.assign(trial.size(), 0.0);
  for (std::size_t i = 0; i < trial.records.size(); ++i) {
    if (trial.records[i].observed()) fit.weights[i] = 1.0 / (fit.pi[i] * fit.standardization);
  }
}

}  // namespace

CensoringFit fit_censoring(const TrialSample& trial, const CensoringConfig& cfg,
                           std::size_t trial_index) {
  CensoringFit fit;
  const std::size_t n = trial.size();
  fit.pi.assign(n, 1.0);

  bool all_observed = true;
  for (const auto& rec : trial.records)
    if (!rec.observed()) all_observed = false;
  if (all_observed) {
    fit.all_observed = true;
    fit.standardization = 1.0;
    fit.weights.assign(n, 1.0);
    return fit;
  }

  bool any_observed_control = false;
  for (const auto& rec : trial.records)
    if (rec.y == 0 && rec.observed()) any_observed_control = true;
  if (!any_observed_control)
    fail(Err::NoObservedControls, "trial '" + trial.id + "' has no observed controls");

  switch (cfg.mode) {
    case CensoringMode::KnownValues: {
      if (cfg.case_pi.size() <= trial_index || cfg.control_pi.size() <= trial_index)
        fail(Err::ConfigError, "known censoring probabilities missing for trial index " +
                                   std::to_string(trial_index));
      for (std::size_t i = 0; i < n; ++i)
        fit.pi[i] = trial.records[i].y == 1 ? cfg.case_pi[trial_index] : cfg.control_pi[trial_index];
      break;
    }
    case CensoringMode::KnownNcc: {
      // exact design probabilities: every case observed, controls sampled
      // without replacement with probability (#sampled controls)/(#controls)
      double controls = 0.0, sampled = 0.0;
      for (const auto& rec : trial.records) {
        if (rec.y == 1) continue;
        controls += 1.0;
        if (rec.observed()) sampled += 1.0;
      }
      double p_control = controls > 0.0 ? sampled / controls : 1.0;
      for (std::size_t i = 0; i < n; ++i)
        fit.pi[i] = trial.records[i].y == 1 ? 1.0 : p_control;
      break;
    }
    case CensoringMode::Estimate: {
      // unity among cases by design; logistic regression of delta on the
      // auxiliary biomarker among controls
      LearnerData rows;
      bool have_aux = true;
      for (const auto& rec : trial.records) {
        if (rec.y == 1) continue;
        rows.w.push_back(rec.l.value_or(0.0));
        if (!rec.l) have_aux = false;
        rows.a.push_back(0);
        rows.y.push_back(rec.observed() ? 1 : 0);
      }
      FittedLearner model =
          fit_learner(have_aux ? "linear" : "intercept", rows, /*outcome_model=*/false);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& rec = trial.records[i];
        if (rec.y == 1) continue;
        fit.pi[i] = model.predict(0, rec.l.value_or(0.0));
      }
      break;
    }
  }
  for (double& p : fit.pi) p = std::clamp(p, kPiFloor, 1.0);
  standardize(fit, trial);
  return fit;
}

std::vector<CensoringFit> fit_censoring_all(const MultiTrialData& data,
                                            const CensoringConfig& cfg) {
  std::vector<CensoringFit> out;
  for (std::size_t s = 0; s < data.num_trials(); ++s)
    out.push_back(fit_censoring(data.trials[s], cfg, s));
  return out;
}

TrialSample nested_case_control_sample(const TrialSample& full, int ratio_per_case, Rng& rng) {
  TrialSample out = full;
  std::vector<std::size_t> controls;
  std::size_t cases = 0;
  for (std::size_t i = 0; i < full.records.size(); ++i) {
    if (full.records[i].y == 1)
      ++cases;
    else
      controls.push_back(i);
  }
  for (auto& rec : out.records) rec.delta = rec.y == 1 ? 1 : 0;

  std::size_t want = std::min(cases * static_cast<std::size_t>(ratio_per_case), controls.size());
  std::vector<std::size_t> keep = rng.sample_without_replacement(controls.size(), want);
  for (std::size_t k : keep) out.records[controls[k]].delta = 1;
  for (auto& rec : out.records)
    if (*rec.delta == 0) rec.w.reset();
  return out;
}

FittedPipeline fit_pipeline(const MultiTrialData& data, const AnalysisConfig& cfg,
                            bool two_phase) {
  FittedPipeline p;
  p.bounds = validate_bounds(cfg.bounds, data);

  std::vector<std::vector<double>> weights;
  if (two_phase) {
    if (p.bounds.path == FluctuationPath::Bivariate)
      fail(Err::ConfigError,
           "the two-phase estimator supports only the univariate fluctuation path");
    p.censoring = fit_censoring_all(data, cfg.censoring);
    for (const auto& c : p.censoring) weights.push_back(c.weights);
  }
  p.nuisances = fit_nuisances(data, weights, cfg);
  p.ctx = build_context(data, as_funcs(p.nuisances), p.bounds, cfg, weights);
  return p;
}

BridgeEstimate ipcw_estimate(const MultiTrialData& data, const AnalysisConfig& cfg, double mu) {
  FittedPipeline p = fit_pipeline(data, cfg, /*two_phase=*/true);
  return phi_estimate(p.ctx, mu);
}

}  // namespace vebridge
