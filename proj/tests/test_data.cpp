#include <sstream>

#include "doctest.h"
#include "support/testutil.hpp"
#include "vebridge/data.hpp"
#include "vebridge/errors.hpp"

using namespace vebridge;

namespace {

MultiTrialData from_csv(const std::string& text) {
  std::istringstream in(text);
  return parse_trials_csv(in);
}

void check_throws(Err code, const std::function<void()>& fn) {
  try {
    fn();
    FAIL_CHECK("expected error ", err_name(code));
  } catch (const Error& e) {
    CHECK(e.code() == code);
  }
}

}  // namespace

TEST_CASE("csv loader groups rows by trial id") {
  auto data = from_csv(
      "trial_id,w,a,y\n"
      "star,0.1,,\n"
      "star,0.2,,\n"
      "1,0.5,0,1\n"
      "1,0.6,1,0\n"
      "2,0.7,1,1\n");
  CHECK(data.num_trials() == 2);
  CHECK(data.n_star() == 2);
  CHECK(data.trials[0].id == "1");
  CHECK(data.trials[1].id == "2");
  CHECK(data.trials[0].records[0].w == 0.5);
  CHECK(data.trials[0].records[1].a == 1);
  CHECK_FALSE(data.two_phase);
  CHECK(data.n_min() == 1);
}

TEST_CASE("csv loader rejects bad rows") {
  check_throws(Err::InvalidTreatment, [] {
    from_csv("trial_id,w,a,y\nstar,0.1,,\n1,0.5,2,0\n");
  });
  check_throws(Err::InvalidOutcome, [] {
    from_csv("trial_id,w,a,y\nstar,0.1,,\n1,0.5,1,3\n");
  });
  check_throws(Err::StarRowHasOutcome, [] {
    from_csv("trial_id,w,a,y\nstar,0.1,1,\n1,0.5,1,0\n");
  });
  check_throws(Err::MissingColumn, [] { from_csv("trial_id,w,a\nstar,0.1,\n"); });
  check_throws(Err::EmptySample, [] { from_csv("trial_id,w,a,y\n1,0.5,1,0\n"); });
  check_throws(Err::EmptySample, [] { from_csv("trial_id,w,a,y\nstar,0.1,,\n"); });
}

TEST_CASE("two-phase columns set the flag and allow missing w") {
  auto data = from_csv(
      "trial_id,w,a,y,delta,l\n"
      "star,0.1,,,,\n"
      "1,0.5,0,1,1,0.4\n"
      "1,,1,0,0,0.2\n");
  CHECK(data.two_phase);
  CHECK(data.trials[0].records[0].delta == 1);
  CHECK(data.trials[0].records[1].delta == 0);
  CHECK_FALSE(data.trials[0].records[1].w.has_value());
  CHECK(data.trials[0].records[1].l == 0.2);

  check_throws(Err::ConfigError, [] {
    // delta=0 rows must not carry the biomarker
    from_csv("trial_id,w,a,y,delta,l\nstar,0.1,,,,\n1,0.5,0,1,0,0.2\n");
  });
}

TEST_CASE("serialize then parse is the identity on records") {
  auto data = from_csv(
      "trial_id,w,a,y,delta,l\n"
      "star,0.1234567890123456,,,,\n"
      "1,0.5,0,1,1,0.25\n"
      "1,,1,0,0,\n"
      "2,0.75,1,1,1,\n");
  auto round = from_csv(serialize_trials(data));
  CHECK(round.star_w == data.star_w);
  REQUIRE(round.num_trials() == data.num_trials());
  for (std::size_t s = 0; s < data.num_trials(); ++s) {
    CHECK(round.trials[s].id == data.trials[s].id);
    CHECK(round.trials[s].records == data.trials[s].records);
  }
}

namespace {

MultiTrialData tiny_data() {
  MultiTrialData data;
  data.star_w = {0.2, 0.5};
  data.trials.push_back(test::balanced_trial("1", {0.3}));
  data.trials.push_back(test::balanced_trial("2", {0.6}));
  return data;
}

BoundsSpec preset_like(double l, double u) {
  BoundsSpec spec;
  spec.ell = {BoundFunc(0.0), BoundFunc(l), BoundFunc(l)};
  spec.uu = {BoundFunc(0.0), BoundFunc(u), BoundFunc(u)};
  spec.vv = {BoundFunc(0.0), BoundFunc(0.5), BoundFunc(0.5)};
  spec.d0 = BoundFunc(0.0);
  spec.d1 = BoundFunc(0.0);
  spec.delta_min = 1e-6;
  return spec;
}

}  // namespace

TEST_CASE("study presets validate on the univariate path") {
  auto data = tiny_data();

  // loosest: pseudo-trial bounds only
  BoundsSpec loosest = preset_like(0.0, 0.0);
  loosest.uu[0] = BoundFunc(1.0);
  auto vb = validate_bounds(loosest, data);
  CHECK(vb.path == FluctuationPath::Univariate);

  auto vb_mod = validate_bounds(preset_like(0.25, 0.75), data);
  CHECK(vb_mod.path == FluctuationPath::Univariate);
  CHECK(vb_mod.path_multiple == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  auto vb_tight = validate_bounds(preset_like(0.4, 0.6), data);
  CHECK(vb_tight.path == FluctuationPath::Univariate);
  CHECK(vb_tight.path_multiple == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("validate_bounds is pure") {
  auto data = tiny_data();
  auto spec = preset_like(0.25, 0.75);
  auto a = validate_bounds(spec, data);
  auto b = validate_bounds(spec, data);
  CHECK(a.path == b.path);
  CHECK(a.path_multiple == b.path_multiple);
  CHECK(a.spec.ell == b.spec.ell);
}

TEST_CASE("bounds violations are rejected") {
  auto data = tiny_data();

  BoundsSpec bad_v = preset_like(0.25, 0.75);
  bad_v.vv = {BoundFunc(0.0), BoundFunc(0.6), BoundFunc(0.6)};
  check_throws(Err::ConvexityViolation, [&] { validate_bounds(bad_v, data); });

  BoundsSpec bad_d = preset_like(0.25, 0.75);
  bad_d.d0 = BoundFunc(1.5);
  check_throws(Err::PseudoRiskOutOfRange, [&] { validate_bounds(bad_d, data); });

  // equal upper and lower weights cannot open any gap
  check_throws(Err::OrderViolation, [&] { validate_bounds(preset_like(0.5, 0.5), data); });
}

TEST_CASE("non-proportional envelope weights route to the bivariate path") {
  auto data = tiny_data();
  BoundsSpec spec = preset_like(0.25, 0.75);
  spec.ell[1] = BoundFunc(0.2);  // 0.2/0.75 vs 0.25/0.75: no common multiple
  auto vb = validate_bounds(spec, data);
  CHECK(vb.path == FluctuationPath::Bivariate);
}

TEST_CASE("piecewise-linear bound functions interpolate and extrapolate flat") {
  BoundFunc f({0.0, 1.0, 2.0}, {0.0, 2.0, 1.0});
  CHECK(f(0.5) == doctest::Approx(1.0));
  CHECK(f(1.5) == doctest::Approx(1.5));
  CHECK(f(-3.0) == 0.0);
  CHECK(f(9.0) == 1.0);
  CHECK(BoundFunc(0.25)(123.0) == 0.25);
  CHECK_THROWS_AS(BoundFunc({1.0, 1.0}, {0.0, 1.0}), Error);
}

TEST_CASE("config json parses and validates") {
  const char* text = R"({
    "bounds": {
      "l": [0, 0.25, 0.25],
      "u": [0, 0.75, 0.75],
      "v": [0, 0.5, 0.5],
      "d0": 0.0, "d1": {"x": [0, 1], "y": [0.1, 0.2]},
      "delta_min": 1e-6
    },
    "mu_grid": [0.1, 0.2, 0.3],
    "z": 1.64,
    "learners": {"outcome": ["intercept", "linear"], "propensity": ["intercept"]},
    "folds": 5,
    "clips": {"m_eps": 1e-6, "g_eps": 0.01, "ratio_lo": 1e-3, "ratio_hi": 1e3},
    "seed": 11,
    "assume_constant_ve": true
  })";
  AnalysisConfig cfg = parse_config_json(text);
  validate_analysis_config(cfg);
  CHECK(cfg.mu_grid.size() == 3);
  CHECK(cfg.z == 1.64);
  CHECK(cfg.folds == 5);
  CHECK(cfg.seed == 11);
  CHECK(cfg.assume_constant_ve);
  CHECK(cfg.bounds.d1(1.0) == doctest::Approx(0.2));
  CHECK(cfg.learners.outcome.size() == 2);

  check_throws(Err::ConfigError, [] { parse_config_json("{"); });
  check_throws(Err::ConfigError, [] { parse_config_json(R"({"bounds": {"l": 3}})"); });

  AnalysisConfig bad = cfg;
  bad.mu_grid = {0.3, 0.2};
  check_throws(Err::ConfigError, [&] { validate_analysis_config(bad); });
  bad.mu_grid = {0.0, 0.2};
  check_throws(Err::ConfigError, [&] { validate_analysis_config(bad); });
  bad = cfg;
  bad.folds = 1;
  check_throws(Err::ConfigError, [&] { validate_analysis_config(bad); });
  bad = cfg;
  bad.z = -1.0;
  check_throws(Err::ConfigError, [&] { validate_analysis_config(bad); });
}
