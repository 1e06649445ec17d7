#include "vebridge/nuisance.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "vebridge/errors.hpp"
#include "vebridge/rng.hpp"

namespace vebridge {

namespace {

void check_weights(const LearnerData& d) {
  if (d.weight.empty()) return;
  double sum = 0.0;
  for (double w : d.weight) {
    if (w < 0.0) fail(Err::ConfigError, "negative fitting weight");
    sum += w;
  }
  if (!(sum > 0.0)) fail(Err::ConfigError, "fitting weights sum to zero");
}

void check_both_arms(const LearnerData& d) {
  bool has0 = false, has1 = false;
  for (std::size_t i = 0; i < d.size(); ++i) {
    double wi = d.weight.empty() ? 1.0 : d.weight[i];
    if (wi <= 0.0) continue;
    (d.a[i] == 1 ? has1 : has0) = true;
  }
  if (!has0 || !has1) fail(Err::SingleArmTrial, "trial lacks one treatment arm");
}

std::pair<double, double> w_range(const std::vector<double>& w) {
  auto [lo, hi] = std::minmax_element(w.begin(), w.end());
  return {*lo, *hi};
}

}  // namespace

RegressionFit fit_outcome_regression(const LearnerData& trial,
                                     const std::vector<std::string>& library, int folds,
                                     double eps_m, std::uint64_t seed) {
  if (trial.size() == 0) fail(Err::EmptySample, "outcome regression on empty sample");
  check_weights(trial);
  check_both_arms(trial);
  RegressionFit fit;
  fit.eps_m = eps_m;
  std::tie(fit.w_lo, fit.w_hi) = w_range(trial.w);
  std::size_t best = cv_select(library, trial, /*outcome_model=*/true, folds, seed, &fit.cv_losses);
  fit.chosen = library[best];
  fit.model = fit_learner(fit.chosen, trial, /*outcome_model=*/true);
  fit.degenerate = !fit.model.converged;
  return fit;
}

PropensityFit fit_propensity(const LearnerData& trial, const std::vector<std::string>& library,
                             int folds, double eps_g, std::uint64_t seed) {
  if (trial.size() == 0) fail(Err::EmptySample, "propensity fit on empty sample");
  check_weights(trial);
  check_both_arms(trial);
  PropensityFit fit;
  fit.eps_g = eps_g;
  std::tie(fit.w_lo, fit.w_hi) = w_range(trial.w);

  // regress A on w: reuse the learner machinery with A as the outcome
  LearnerData prop;
  prop.w = trial.w;
  prop.y = trial.a;
  prop.weight = trial.weight;
  std::size_t best = cv_select(library, prop, /*outcome_model=*/false, folds, seed, &fit.cv_losses);
  fit.chosen = library[best];
  fit.model = fit_learner(fit.chosen, prop, /*outcome_model=*/false);
  fit.degenerate = !fit.model.converged;
  return fit;
}

RatioFit fit_density_ratio(const std::vector<double>& star_w, const std::vector<double>& trial_w,
                           const std::vector<double>& trial_weight,
                           const std::string& bandwidth_rule, const ClipConfig& clips) {
  if (star_w.empty() || trial_w.empty()) fail(Err::EmptySample, "density ratio on empty sample");
  RatioFit fit;
  fit.clip_lo = clips.ratio_lo;
  fit.clip_hi = clips.ratio_hi;

  auto [slo, shi] = w_range(star_w);
  auto [tlo, thi] = w_range(trial_w);
  fit.w_lo = std::min(slo, tlo);
  fit.w_hi = std::max(shi, thi);
  // logit scale when the pooled data live strictly inside the unit interval,
  // mirroring boundary-respecting density estimation; the Jacobians of the
  // shared transform cancel in the ratio
  fit.logit_scale = fit.w_lo > 0.0 && fit.w_hi < 1.0;

  auto transform_all = [&](const std::vector<double>& w) {
    std::vector<double> t(w.size());
    for (std::size_t i = 0; i < w.size(); ++i)
      t[i] = fit.logit_scale ? logit(std::clamp(w[i], fit.w_lo, fit.w_hi)) : w[i];
    return t;
  };
  std::vector<double> star_t = transform_all(star_w);
  std::vector<double> trial_t = transform_all(trial_w);

  double glo = fit.logit_scale ? logit(fit.w_lo) : fit.w_lo;
  double ghi = fit.logit_scale ? logit(fit.w_hi) : fit.w_hi;
  fit.star_kde = fit_kde(star_t, {}, bandwidth_rule, glo, ghi);
  fit.trial_kde = fit_kde(trial_t, trial_weight, bandwidth_rule, glo, ghi);

  // standardize: weighted trial-sample mean of the clipped ratio equals 1
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < trial_w.size(); ++i) {
    double wi = trial_weight.empty() ? 1.0 : trial_weight[i];
    num += wi * fit.raw(trial_w[i]);
    den += wi;
  }
  fit.standardization = den > 0.0 ? num / den : 1.0;
  if (!(fit.standardization > 0.0)) fit.standardization = 1.0;
  return fit;
}

NuisanceSet fit_nuisances(const MultiTrialData& data,
                          const std::vector<std::vector<double>>& trial_weights,
                          const AnalysisConfig& cfg) {
  NuisanceSet out;
  for (std::size_t s = 0; s < data.num_trials(); ++s) {
    const TrialSample& trial = data.trials[s];
    const std::vector<double>* wgt =
        (s < trial_weights.size() && !trial_weights[s].empty()) ? &trial_weights[s] : nullptr;

    LearnerData rows;
    std::vector<double> trial_w, trial_kde_wgt;
    for (std::size_t i = 0; i < trial.records.size(); ++i) {
      const ObservationRecord& r = trial.records[i];
      if (!r.observed()) continue;
      if (!r.w) fail(Err::ConfigError, "observed record missing biomarker");
      rows.w.push_back(*r.w);
      rows.a.push_back(r.a);
      rows.y.push_back(r.y);
      if (wgt) rows.weight.push_back((*wgt)[i]);
      trial_w.push_back(*r.w);
      if (wgt) trial_kde_wgt.push_back((*wgt)[i]);
    }
    if (rows.size() == 0) fail(Err::EmptySample, "trial '" + trial.id + "' has no observed rows");

    TrialNuisances fits;
    fits.m = fit_outcome_regression(rows, cfg.learners.outcome, cfg.folds, cfg.clips.m_eps,
                                    derive_seed(cfg.seed, rngstream::kFolds, 2 * s));
    fits.g = fit_propensity(rows, cfg.learners.propensity, cfg.folds, cfg.clips.g_eps,
                            derive_seed(cfg.seed, rngstream::kFolds, 2 * s + 1));
    fits.r = fit_density_ratio(data.star_w, trial_w, trial_kde_wgt, "plugin", cfg.clips);
    out.trials.push_back(std::move(fits));
  }
  return out;
}

std::string nuisance_dump_json(const NuisanceSet& fits) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& t : fits.trials) {
    nlohmann::ordered_json e;
    e["outcome"] = {{"learner", t.m.chosen},
                    {"coef", t.m.model.coef},
                    {"spline_knots", t.m.model.spline_knots},
                    {"w_center", t.m.model.w_center},
                    {"cv_losses", t.m.cv_losses},
                    {"degenerate", t.m.degenerate}};
    e["propensity"] = {{"learner", t.g.chosen},
                       {"coef", t.g.model.coef},
                       {"spline_knots", t.g.model.spline_knots},
                       {"w_center", t.g.model.w_center},
                       {"cv_losses", t.g.cv_losses},
                       {"degenerate", t.g.degenerate}};
    e["ratio"] = {{"logit_scale", t.r.logit_scale},
                  {"star_bandwidth", t.r.star_kde.bandwidth},
                  {"trial_bandwidth", t.r.trial_kde.bandwidth},
                  {"standardization", t.r.standardization},
                  {"bandwidth_fallback",
                   t.r.star_kde.bandwidth_fallback || t.r.trial_kde.bandwidth_fallback}};
    j.push_back(e);
  }
  return j.dump(2);
}

}  // namespace vebridge
