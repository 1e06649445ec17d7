#pragma once

#include <functional>
#include <vector>

#include "vebridge/bridge.hpp"
#include "vebridge/data.hpp"
#include "vebridge/rng.hpp"
#include "vebridge/simgen.hpp"

namespace vebridge::test {

inline ObservationRecord rec(double w, int a, int y) {
  ObservationRecord r;
  r.w = w;
  r.a = a;
  r.y = y;
  return r;
}

//! Exact nuisance functions for synthetic scenarios.
inline NuisanceFuncs exact_funcs(std::size_t S, std::function<double(std::size_t, int, double)> m,
                                 std::function<double(std::size_t, double)> g,
                                 std::function<double(std::size_t, double)> r) {
  NuisanceFuncs out;
  for (std::size_t s = 0; s < S; ++s) {
    TrialFuncs f;
    f.m = [m, s](int a, double w) { return m(s, a, w); };
    f.g = [g, s](double w) { return g(s, w); };
    f.r = [r, s](double w) { return r(s, w); };
    out.trials.push_back(std::move(f));
  }
  return out;
}

//! One balanced, outcome-mixed trial whose records sit at the given w values.
inline TrialSample balanced_trial(const std::string& id, const std::vector<double>& ws) {
  TrialSample t;
  t.id = id;
  for (double w : ws)
    for (int a : {0, 1})
      for (int y : {0, 1}) t.records.push_back(rec(w, a, y));
  return t;
}

//! Two-point study with every bound carried by the pseudo-trial, so the
//! trial-level corrections vanish identically and sample-level results
//! match exact arithmetic on the two support points.
struct TwoPointWorld {
  MultiTrialData data;
  BoundsSpec bounds;
  NuisanceFuncs funcs;
  AnalysisConfig cfg;
};

inline TwoPointWorld two_point_world(double lam = 0.4, double ups = 0.6, double ve0 = 0.2,
                                     double ve1 = 0.8) {
  TwoPointWorld w;
  w.data.star_w = {0.0, 1.0};
  w.data.trials.push_back(balanced_trial("1", {0.0, 1.0}));

  w.bounds.ell = {BoundFunc(lam), BoundFunc(0.0)};
  w.bounds.uu = {BoundFunc(ups), BoundFunc(0.0)};
  w.bounds.vv = {BoundFunc(1.0), BoundFunc(0.0)};
  w.bounds.d0 = BoundFunc(0.5);
  // d1 interpolates so that 1 - d1/d0 hits the requested efficacy values
  w.bounds.d1 = BoundFunc({0.0, 1.0}, {0.5 * (1.0 - ve0), 0.5 * (1.0 - ve1)});
  w.bounds.delta_min = 1e-9;

  w.funcs = exact_funcs(
      1, [](std::size_t, int, double) { return 0.5; }, [](std::size_t, double) { return 0.5; },
      [](std::size_t, double) { return 1.0; });
  w.cfg.bounds = w.bounds;
  return w;
}

inline BridgeContext two_point_context(const TwoPointWorld& w,
                                       const std::vector<std::vector<double>>& weights = {}) {
  ValidatedBounds vb = validate_bounds(w.bounds, w.data);
  return build_context(w.data, w.funcs, vb, w.cfg, weights);
}

//! Small simulated study (same process as the experiments, reduced sizes).
inline MultiTrialData small_sim_data(std::uint64_t seed, std::size_t n_star = 60,
                                     std::size_t n_trial = 600, bool with_aux = false) {
  Rng rng(derive_seed(seed, rngstream::kTest, 0));
  SampleSizes sz{n_star, n_trial, n_trial};
  return generate_dataset(sz, rng, with_aux);
}

}  // namespace vebridge::test
