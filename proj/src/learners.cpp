#include "vebridge/learners.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "vebridge/errors.hpp"
#include "vebridge/rng.hpp"

namespace vebridge {

namespace {

constexpr double kEtaClamp = 30.0;
constexpr int kMaxIrls = 100;
constexpr double kCoefTol = 1e-10;

double pos3(double x) { return x > 0.0 ? x * x * x : 0.0; }

//! Design row for a learner; outcome models see (a, w), propensity models
//! only w. Spline basis: cubic truncated powers with knots at training
//! quartiles, interacted with the treatment arm for outcome models.
void build_row(const std::string& id, bool outcome, int a, double w,
               const std::vector<double>& knots, double w_center, std::vector<double>& row) {
  row.clear();
  const double wc = w - w_center;
  row.push_back(1.0);
  if (id == "intercept") {
    return;
  }
  if (outcome) row.push_back(static_cast<double>(a));
  if (id == "linear") {
    row.push_back(wc);
    return;
  }
  if (id == "interaction") {
    row.push_back(wc);
    if (outcome) row.push_back(a * wc);
    return;
  }
  if (id == "quadratic") {
    row.push_back(wc);
    row.push_back(wc * wc);
    if (outcome) {
      row.push_back(a * wc);
      row.push_back(a * wc * wc);
    }
    return;
  }
  if (id == "spline") {
    std::vector<double> basis{wc, wc * wc, wc * wc * wc};
    for (double k : knots) basis.push_back(pos3(w - k));
    for (double b : basis) row.push_back(b);
    if (outcome)
      for (double b : basis) row.push_back(a * b);
    return;
  }
  fail(Err::ConfigError, "unknown learner id '" + id + "'");
}

std::vector<double> spline_knots_from(const std::vector<double>& w) {
  std::vector<double> sorted = w;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> knots;
  for (double q : {0.25, 0.5, 0.75}) {
    std::size_t idx = static_cast<std::size_t>(q * (sorted.size() - 1));
    knots.push_back(sorted[idx]);
  }
  knots.erase(std::unique(knots.begin(), knots.end()), knots.end());
  return knots;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

//! IRLS on the given design; returns false when no iterate met the
//! coefficient tolerance, in which case beta holds the best-likelihood
//! iterate seen.
bool irls(const Eigen::MatrixXd& X, const std::vector<int>& y, const std::vector<double>& weight,
          Eigen::VectorXd& beta) {
  const Eigen::Index n = X.rows(), p = X.cols();
  beta = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd best = beta;
  double best_loglik = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd eta(n), score(p);
  Eigen::MatrixXd hess(p, p);
  for (int iter = 0; iter < kMaxIrls; ++iter) {
    eta = X * beta;
    score.setZero();
    hess.setZero();
    double loglik = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double e = std::clamp(eta[i], -kEtaClamp, kEtaClamp);
      double pr = expit(e);
      double wi = weight.empty() ? 1.0 : weight[static_cast<std::size_t>(i)];
      int yi = y[static_cast<std::size_t>(i)];
      loglik += wi * (yi * std::log(std::max(pr, 1e-300)) +
                      (1 - yi) * std::log(std::max(1.0 - pr, 1e-300)));
      double resid = wi * (yi - pr);
      double curv = wi * pr * (1.0 - pr);
      score.noalias() += resid * X.row(i).transpose();
      hess.noalias() += curv * (X.row(i).transpose() * X.row(i));
    }
    if (loglik > best_loglik) {
      best_loglik = loglik;
      best = beta;
    }
    Eigen::LDLT<Eigen::MatrixXd> solver(hess);
    Eigen::VectorXd step;
    if (solver.info() == Eigen::Success) step = solver.solve(score);
    if (solver.info() != Eigen::Success || !step.allFinite()) {
      // singular curvature: retry with a small ridge, deterministic
      Eigen::MatrixXd ridged = hess + 1e-10 * Eigen::MatrixXd::Identity(p, p);
      step = ridged.ldlt().solve(score);
      if (!step.allFinite()) {
        beta = best;
        return false;
      }
    }
    beta += step;
    if (step.cwiseAbs().maxCoeff() < kCoefTol) return true;
  }
  beta = best;
  return false;
}

}  // namespace

bool known_learner_id(const std::string& id, bool) {
  return id == "intercept" || id == "linear" || id == "interaction" || id == "quadratic" ||
         id == "spline";
}

double FittedLearner::predict(int a, double w) const {
  std::vector<double> row;
  build_row(id, outcome_model, a, w, spline_knots, w_center, row);
  double eta = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j) eta += coef[j] * row[j];
  return expit(std::clamp(eta, -kEtaClamp, kEtaClamp));
}

FittedLearner fit_learner(const std::string& id, const LearnerData& data, bool outcome_model) {
  if (!known_learner_id(id, outcome_model))
    fail(Err::ConfigError, "unknown learner id '" + id + "'");
  FittedLearner fit;
  fit.id = id;
  fit.outcome_model = outcome_model;
  if (id == "spline") fit.spline_knots = spline_knots_from(data.w);
  if (id != "intercept") fit.w_center = mean_of(data.w);

  std::vector<double> row;
  build_row(id, outcome_model, outcome_model ? 1 : 0, data.w.empty() ? 0.0 : data.w[0],
            fit.spline_knots, fit.w_center, row);
  const Eigen::Index p = static_cast<Eigen::Index>(row.size());
  Eigen::MatrixXd X(static_cast<Eigen::Index>(data.size()), p);
  for (std::size_t i = 0; i < data.size(); ++i) {
    build_row(id, outcome_model, data.a.empty() ? 0 : data.a[i], data.w[i], fit.spline_knots,
              fit.w_center, row);
    for (Eigen::Index j = 0; j < p; ++j) X(static_cast<Eigen::Index>(i), j) = row[j];
  }
  Eigen::VectorXd beta;
  fit.converged = irls(X, data.y, data.weight, beta);
  fit.coef.assign(beta.data(), beta.data() + beta.size());
  return fit;
}

std::vector<int> make_folds(const std::vector<int>& y, int folds, std::uint64_t seed) {
  std::vector<std::size_t> cases, controls;
  for (std::size_t i = 0; i < y.size(); ++i) (y[i] == 1 ? cases : controls).push_back(i);
  Rng rng(seed);
  rng.shuffle(cases);
  rng.shuffle(controls);
  std::vector<int> fold(y.size(), 0);
  int next = 0;
  for (std::size_t i : cases) fold[i] = (next++) % folds;
  for (std::size_t i : controls) fold[i] = (next++) % folds;
  return fold;
}

std::size_t cv_select(const std::vector<std::string>& library, const LearnerData& data,
                      bool outcome_model, int folds, std::uint64_t seed,
                      std::vector<double>* cv_losses) {
  if (library.empty()) fail(Err::ConfigError, "empty learner library");
  if (cv_losses) cv_losses->assign(library.size(), 0.0);
  if (library.size() == 1) return 0;
  if (static_cast<std::size_t>(folds) > data.size())
    fail(Err::ConfigError, "fold count exceeds sample size");

  std::vector<int> fold = make_folds(data.y, folds, seed);
  std::vector<double> loss(library.size(), 0.0);
  double total_weight = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i)
    total_weight += data.weight.empty() ? 1.0 : data.weight[i];

  for (int v = 0; v < folds; ++v) {
    LearnerData train;
    std::vector<std::size_t> held;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (fold[i] == v) {
        held.push_back(i);
        continue;
      }
      train.w.push_back(data.w[i]);
      train.a.push_back(data.a.empty() ? 0 : data.a[i]);
      train.y.push_back(data.y[i]);
      if (!data.weight.empty()) train.weight.push_back(data.weight[i]);
    }
    if (train.size() == 0 || held.empty()) continue;
    for (std::size_t k = 0; k < library.size(); ++k) {
      FittedLearner f = fit_learner(library[k], train, outcome_model);
      for (std::size_t i : held) {
        double pr = f.predict(data.a.empty() ? 0 : data.a[i], data.w[i]);
        pr = std::clamp(pr, 1e-12, 1.0 - 1e-12);
        double wi = data.weight.empty() ? 1.0 : data.weight[i];
        loss[k] -= wi * (data.y[i] * std::log(pr) + (1 - data.y[i]) * std::log(1.0 - pr));
      }
    }
  }
  if (total_weight > 0.0)
    for (double& l : loss) l /= total_weight;
  if (cv_losses) *cv_losses = loss;

  std::size_t best = 0;
  for (std::size_t k = 1; k < library.size(); ++k)
    if (loss[k] < loss[best]) best = k;
  return best;
}

OffsetLogisticFit fit_offset_logistic(const std::vector<std::vector<double>>& covariates,
                                      const std::vector<double>& offset,
                                      const std::vector<int>& y, const std::vector<double>& weight,
                                      double score_tol, int max_iter) {
  const std::size_t k = covariates.size();
  const std::size_t n = offset.size();
  OffsetLogisticFit fit;
  fit.eps.assign(k, 0.0);
  if (k == 0 || n == 0) return fit;

  // identically-zero columns carry no score: solve the reduced system and
  // keep their coefficients at zero
  std::vector<std::size_t> active;
  for (std::size_t j = 0; j < k; ++j) {
    bool any = false;
    for (double v : covariates[j])
      if (v != 0.0) {
        any = true;
        break;
      }
    if (any) active.push_back(j);
  }
  if (active.size() < k) {
    if (active.empty()) return fit;
    std::vector<std::vector<double>> reduced;
    for (std::size_t j : active) reduced.push_back(covariates[j]);
    OffsetLogisticFit sub = fit_offset_logistic(reduced, offset, y, weight, score_tol, max_iter);
    fit.converged = sub.converged;
    fit.final_score = sub.final_score;
    for (std::size_t i = 0; i < active.size(); ++i) fit.eps[active[i]] = sub.eps[i];
    return fit;
  }

  Eigen::VectorXd eps = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k));
  Eigen::VectorXd score(static_cast<Eigen::Index>(k));
  Eigen::MatrixXd hess(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  Eigen::VectorXd x(static_cast<Eigen::Index>(k));

  double best_norm = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_eps = eps;

  for (int iter = 0; iter <= max_iter; ++iter) {
    score.setZero();
    hess.setZero();
    for (std::size_t i = 0; i < n; ++i) {
      double eta = offset[i];
      for (std::size_t j = 0; j < k; ++j) {
        x[static_cast<Eigen::Index>(j)] = covariates[j][i];
        eta += eps[static_cast<Eigen::Index>(j)] * covariates[j][i];
      }
      double pr = expit(std::clamp(eta, -kEtaClamp, kEtaClamp));
      double wi = weight.empty() ? 1.0 : weight[i];
      score.noalias() += (wi * (y[i] - pr)) * x;
      hess.noalias() += (wi * pr * (1.0 - pr)) * (x * x.transpose());
    }
    double norm = score.cwiseAbs().maxCoeff();
    if (norm < best_norm) {
      best_norm = norm;
      best_eps = eps;
    }
    if (norm < score_tol) {
      fit.converged = true;
      fit.final_score = norm;
      fit.eps.assign(eps.data(), eps.data() + eps.size());
      return fit;
    }
    if (iter == max_iter) break;
    // degenerate curvature (e.g. all-zero covariate): keep current eps
    if (!(hess.diagonal().minCoeff() > 0.0) || !hess.allFinite()) break;
    Eigen::VectorXd step = hess.ldlt().solve(score);
    if (!step.allFinite()) break;
    // damp oversized Newton steps
    double ms = step.cwiseAbs().maxCoeff();
    if (ms > 10.0) step *= 10.0 / ms;
    eps += step;
  }
  fit.converged = best_norm < score_tol;
  fit.final_score = best_norm;
  fit.eps.assign(best_eps.data(), best_eps.data() + best_eps.size());
  return fit;
}

}  // namespace vebridge
