#include <cmath>

#include "doctest.h"
#include "support/testutil.hpp"
#include "vebridge/learners.hpp"
#include "vebridge/rng.hpp"

using namespace vebridge;

namespace {

LearnerData logistic_sample(std::size_t n, std::uint64_t seed,
                            const std::function<double(int, double)>& prob) {
  Rng rng(seed);
  LearnerData d;
  for (std::size_t i = 0; i < n; ++i) {
    double w = rng.uniform();
    int a = rng.bernoulli(0.5);
    d.w.push_back(w);
    d.a.push_back(a);
    d.y.push_back(rng.bernoulli(prob(a, w)));
  }
  return d;
}

}  // namespace

TEST_CASE("intercept learner recovers the empirical mean") {
  LearnerData d;
  for (int i = 0; i < 40; ++i) {
    d.w.push_back(0.1 * (i % 10));
    d.a.push_back(i % 2);
    d.y.push_back(i % 4 == 0 ? 1 : 0);
  }
  FittedLearner f = fit_learner("intercept", d, /*outcome_model=*/false);
  CHECK(f.converged);
  CHECK(f.predict(0, 0.3) == doctest::Approx(0.25).epsilon(1e-9));
}

TEST_CASE("fits are deterministic and unit weights change nothing") {
  auto d = logistic_sample(400, 99, [](int a, double w) { return expit(-1.0 + a + w); });
  FittedLearner f1 = fit_learner("interaction", d, true);
  FittedLearner f2 = fit_learner("interaction", d, true);
  CHECK(f1.coef == f2.coef);

  LearnerData dw = d;
  dw.weight.assign(d.size(), 1.0);
  FittedLearner f3 = fit_learner("interaction", dw, true);
  CHECK(f1.coef == f3.coef);
}

TEST_CASE("cross-validated selection prefers the better-specified learner") {
  // linear signal in the logit: the linear learner must beat intercept-only
  auto lin = logistic_sample(2000, 5, [](int, double w) { return expit(-2.0 + 3.0 * w); });
  std::vector<double> losses;
  std::size_t pick = cv_select({"intercept", "linear"}, lin, false, 5, 31, &losses);
  CHECK(pick == 1);
  CHECK(losses[1] < losses[0]);

  // quadratic signal: the quadratic learner must beat intercept-only
  auto quad = logistic_sample(2000, 6, [](int, double w) {
    return expit(-1.5 + 8.0 * (w - 0.5) * (w - 0.5));
  });
  pick = cv_select({"intercept", "quadratic"}, quad, false, 5, 32, &losses);
  CHECK(pick == 1);
  CHECK(losses[1] < losses[0]);
}

TEST_CASE("selection tie-breaks by library order and skips CV for singletons") {
  auto d = logistic_sample(100, 7, [](int, double) { return 0.3; });
  CHECK(cv_select({"spline"}, d, false, 5, 1) == 0);
  // identical duplicate learners give identical losses: first one wins
  CHECK(cv_select({"linear", "linear"}, d, false, 5, 1) == 0);
  CHECK_THROWS_AS(cv_select({"linear", "intercept"}, d, false, 200, 1), Error);
}

TEST_CASE("fold assignment is stratified and deterministic") {
  std::vector<int> y(100, 0);
  for (int i = 0; i < 20; ++i) y[i] = 1;
  auto f1 = make_folds(y, 5, 42);
  auto f2 = make_folds(y, 5, 42);
  CHECK(f1 == f2);
  // each fold receives the same number of cases
  std::vector<int> case_count(5, 0);
  for (int i = 0; i < 20; ++i) ++case_count[f1[i]];
  for (int c : case_count) CHECK(c == 4);
  auto f3 = make_folds(y, 5, 43);
  CHECK(f1 != f3);
}

TEST_CASE("offset logistic solves its score equation") {
  Rng rng(12);
  std::vector<std::vector<double>> covs(1);
  std::vector<double> offset;
  std::vector<int> y;
  for (int i = 0; i < 500; ++i) {
    double h = rng.uniform() * 0.2;
    covs[0].push_back(h);
    offset.push_back(-1.0 + rng.normal() * 0.3);
    y.push_back(rng.bernoulli(expit(offset.back() + 2.0 * h)));
  }
  OffsetLogisticFit fit = fit_offset_logistic(covs, offset, y, {}, 1e-10, 200);
  CHECK(fit.converged);
  double score = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i)
    score += covs[0][i] * (y[i] - expit(offset[i] + fit.eps[0] * covs[0][i]));
  CHECK(std::abs(score) < 1e-9);
}

TEST_CASE("offset logistic with an all-zero covariate returns zero") {
  std::vector<std::vector<double>> covs{{0.0, 0.0, 0.0}};
  std::vector<double> offset{-1.0, 0.0, 1.0};
  std::vector<int> y{0, 1, 1};
  OffsetLogisticFit fit = fit_offset_logistic(covs, offset, y, {});
  CHECK(fit.converged);
  CHECK(fit.eps[0] == 0.0);
}
