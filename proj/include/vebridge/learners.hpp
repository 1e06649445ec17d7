#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace vebridge {

inline double logit(double p) { return std::log(p / (1.0 - p)); }
inline double expit(double x) {
  if (x >= 0.0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

//! Rows used to fit a learner. `weight` empty means unit weights; when
//! weights are all exactly 1 the fit is bitwise identical to unweighted.
struct LearnerData {
  std::vector<double> w;
  std::vector<int> a;  // ignored by propensity learners
  std::vector<int> y;
  std::vector<double> weight;

  std::size_t size() const { return w.size(); }
};

//! One member of the built-in logistic library, fitted by IRLS.
//! Identifiers: intercept, linear, interaction, quadratic, spline.
struct FittedLearner {
  std::string id;
  bool outcome_model = true;  // design includes the treatment indicator
  std::vector<double> coef;
  std::vector<double> spline_knots;
  double w_center = 0.0;  // design built on w - w_center
  bool converged = true;

  //! Fitted probability (unclipped; callers apply their own clips).
  double predict(int a, double w) const;
};

bool known_learner_id(const std::string& id, bool outcome_model);

//! Fit one library member on the full data.
FittedLearner fit_learner(const std::string& id, const LearnerData& data, bool outcome_model);

//! Stratified-by-y V-fold assignment, deterministic in the seed.
std::vector<int> make_folds(const std::vector<int>& y, int folds, std::uint64_t seed);

//! V-fold cross-validated selection under weighted negative Bernoulli
//! log-likelihood; ties broken by library order. Returns the library index.
//! A singleton library short-circuits without running CV.
std::size_t cv_select(const std::vector<std::string>& library, const LearnerData& data,
                      bool outcome_model, int folds, std::uint64_t seed,
                      std::vector<double>* cv_losses = nullptr);

//! Logistic regression with per-record offsets and no intercept, used by
//! the fluctuation step. Covariates arrive column-major (k columns).
//! Newton iterations run until the score is below `score_tol` in sup norm.
struct OffsetLogisticFit {
  std::vector<double> eps;
  bool converged = true;
  double final_score = 0.0;
};

OffsetLogisticFit fit_offset_logistic(const std::vector<std::vector<double>>& covariates,
                                      const std::vector<double>& offset,
                                      const std::vector<int>& y, const std::vector<double>& weight,
                                      double score_tol = 1e-12, int max_iter = 200);

}  // namespace vebridge
