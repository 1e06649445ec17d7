#include <cmath>

#include "doctest.h"
#include "support/testutil.hpp"
#include "vebridge/errors.hpp"
#include "vebridge/twophase.hpp"

using namespace vebridge;

namespace {

MultiTrialData with_unit_delta(const MultiTrialData& data) {
  MultiTrialData out = data;
  out.two_phase = true;
  for (auto& t : out.trials)
    for (auto& r : t.records) r.delta = 1;
  return out;
}

}  // namespace

TEST_CASE("all-observed data reduce the weighted estimator to the full-data one, bitwise") {
  MultiTrialData data = test::small_sim_data(31, 40, 400, /*with_aux=*/true);
  AnalysisConfig cfg = preset_config(Preset::Moderate, 17);
  MultiTrialData marked = with_unit_delta(data);

  FittedPipeline full = fit_pipeline(data, cfg, false);
  FittedPipeline ipcw = fit_pipeline(marked, cfg, true);
  for (const auto& c : ipcw.censoring) {
    CHECK(c.all_observed);
    CHECK(c.standardization == 1.0);
    for (double w : c.weights) CHECK(w == 1.0);
  }

  MuFeasibleRange fr = mu_feasible_range(full.ctx);
  for (int k = 1; k <= 5; ++k) {
    double mu = fr.lo + k * (fr.hi - fr.lo) / 6.0;
    BridgeEstimate a = phi_estimate(full.ctx, mu);
    BridgeEstimate b = phi_estimate(ipcw.ctx, mu);
    CHECK(a.phi == b.phi);
    CHECK(a.omega == b.omega);
    CHECK(a.gamma == b.gamma);
    CHECK(a.sigma_n == b.sigma_n);
    CHECK(a.lcb == b.lcb);
    CHECK(a.grad_star == b.grad_star);
    CHECK(a.grad_trial == b.grad_trial);
  }
}

TEST_CASE("nested case-control sampling: counts, determinism, clamping") {
  MultiTrialData data = test::small_sim_data(41, 30, 300);
  const TrialSample& full = data.trials[0];
  std::size_t cases = 0, controls = 0;
  for (const auto& r : full.records) (r.y == 1 ? cases : controls)++;
  REQUIRE(cases > 0);

  Rng rng1(7), rng2(7), rng3(8);
  TrialSample s1 = nested_case_control_sample(full, 1, rng1);
  TrialSample s2 = nested_case_control_sample(full, 1, rng2);
  TrialSample s3 = nested_case_control_sample(full, 1, rng3);

  std::size_t observed_controls = 0;
  for (const auto& r : s1.records) {
    if (r.y == 1) {
      CHECK(*r.delta == 1);  // every case observed
    } else if (*r.delta == 0) {
      CHECK_FALSE(r.w.has_value());  // biomarker erased
    } else {
      ++observed_controls;
    }
  }
  CHECK(observed_controls == std::min(cases, controls));

  auto deltas = [](const TrialSample& t) {
    std::vector<int> d;
    for (const auto& r : t.records) d.push_back(*r.delta);
    return d;
  };
  CHECK(deltas(s1) == deltas(s2));
  CHECK(deltas(s1) != deltas(s3));

  // more requested controls than available: everything observed
  TrialSample tiny;
  tiny.id = "t";
  tiny.records = {test::rec(0.1, 0, 1), test::rec(0.2, 1, 1), test::rec(0.3, 0, 0)};
  Rng rng4(1);
  TrialSample clamped = nested_case_control_sample(tiny, 5, rng4);
  for (const auto& r : clamped.records) CHECK(*r.delta == 1);
}

TEST_CASE("known-design probabilities and weight standardization") {
  MultiTrialData data = test::small_sim_data(43, 30, 400);
  Rng rng(3);
  TrialSample ncc = nested_case_control_sample(data.trials[0], 1, rng);
  std::size_t cases = 0, controls = 0, sampled = 0;
  for (const auto& r : ncc.records) {
    if (r.y == 1)
      ++cases;
    else {
      ++controls;
      if (*r.delta == 1) ++sampled;
    }
  }

  CensoringConfig cfg;
  cfg.mode = CensoringMode::KnownNcc;
  CensoringFit fit = fit_censoring(ncc, cfg, 0);
  for (std::size_t i = 0; i < ncc.records.size(); ++i) {
    if (ncc.records[i].y == 1)
      CHECK(fit.pi[i] == 1.0);
    else
      CHECK(fit.pi[i] == static_cast<double>(sampled) / static_cast<double>(controls));
  }
  double wsum = 0.0;
  for (std::size_t i = 0; i < ncc.records.size(); ++i)
    if (ncc.records[i].observed()) wsum += fit.weights[i];
  CHECK(std::abs(wsum - static_cast<double>(ncc.size())) < 1e-9);
}

TEST_CASE("estimated censoring standardizes weights per trial") {
  MultiTrialData data = test::small_sim_data(47, 30, 500, /*with_aux=*/true);
  MultiTrialData ncc = data;
  ncc.two_phase = true;
  for (std::size_t s = 0; s < ncc.trials.size(); ++s) {
    Rng rng(derive_seed(5, rngstream::kNcc, s));
    ncc.trials[s] = nested_case_control_sample(data.trials[s], 1, rng);
  }
  CensoringConfig cfg;  // estimate (default)
  auto fits = fit_censoring_all(ncc, cfg);
  for (std::size_t s = 0; s < fits.size(); ++s) {
    double wsum = 0.0;
    for (std::size_t i = 0; i < ncc.trials[s].records.size(); ++i)
      if (ncc.trials[s].records[i].observed()) wsum += fits[s].weights[i];
    CHECK(std::abs(wsum - static_cast<double>(ncc.trials[s].size())) < 1e-9);
    for (std::size_t i = 0; i < fits[s].pi.size(); ++i) {
      CHECK(fits[s].pi[i] > 0.0);
      CHECK(fits[s].pi[i] <= 1.0);
    }
  }
}

TEST_CASE("no observed controls is an error") {
  TrialSample t;
  t.id = "1";
  t.records = {test::rec(0.2, 0, 1), test::rec(0.4, 1, 1)};
  for (auto& r : t.records) r.delta = 1;
  ObservationRecord hidden;
  hidden.a = 0;
  hidden.y = 0;
  hidden.delta = 0;
  t.records.push_back(hidden);
  CensoringConfig cfg;
  CHECK_THROWS_AS(fit_censoring(t, cfg, 0), Error);
}

TEST_CASE("weighted pooled score vanishes after the weighted fluctuation") {
  MultiTrialData data = test::small_sim_data(53, 40, 600, /*with_aux=*/true);
  MultiTrialData ncc = data;
  ncc.two_phase = true;
  for (std::size_t s = 0; s < ncc.trials.size(); ++s) {
    Rng rng(derive_seed(11, rngstream::kNcc, s));
    ncc.trials[s] = nested_case_control_sample(data.trials[s], 1, rng);
  }
  AnalysisConfig cfg = preset_config(Preset::Moderate, 29);
  FittedPipeline pipe = fit_pipeline(ncc, cfg, true);
  CHECK(std::abs(pipe.ctx.score_beta1) <= 1e-8);
  CHECK(pipe.ctx.fluct.converged);
}

TEST_CASE("auxiliary biomarker matters only through the weights under known design") {
  MultiTrialData data = test::small_sim_data(59, 30, 400, /*with_aux=*/true);
  MultiTrialData ncc = data;
  ncc.two_phase = true;
  for (std::size_t s = 0; s < ncc.trials.size(); ++s) {
    Rng rng(derive_seed(13, rngstream::kNcc, s));
    ncc.trials[s] = nested_case_control_sample(data.trials[s], 1, rng);
  }
  MultiTrialData erased = ncc;
  for (auto& t : erased.trials)
    for (auto& r : t.records) r.l.reset();

  AnalysisConfig cfg = preset_config(Preset::Moderate, 23);
  cfg.censoring.mode = CensoringMode::KnownNcc;
  double mu = true_mu(Preset::Moderate);
  BridgeEstimate a = ipcw_estimate(ncc, cfg, mu);
  BridgeEstimate b = ipcw_estimate(erased, cfg, mu);
  CHECK(a.phi == b.phi);
  CHECK(a.lcb == b.lcb);
}

TEST_CASE("bivariate-path bounds are rejected in two-phase mode") {
  MultiTrialData data = test::small_sim_data(61, 20, 200, /*with_aux=*/true);
  MultiTrialData marked = with_unit_delta(data);
  AnalysisConfig cfg = preset_config(Preset::Moderate, 1);
  cfg.bounds.ell[1] = BoundFunc(0.2);  // breaks proportionality
  CHECK_THROWS_AS(fit_pipeline(marked, cfg, true), Error);
}
