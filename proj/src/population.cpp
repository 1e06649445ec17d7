#include <algorithm>
#include <cmath>

#include "vebridge/bridge.hpp"
#include "vebridge/errors.hpp"

namespace vebridge {

namespace {

void check_instance(const DiscreteInstance& inst, bool need_w) {
  const std::size_t n = inst.prob.size();
  if (n == 0) fail(Err::ConfigError, "empty discrete instance");
  if (inst.lam.size() != n || inst.ups.size() != n || inst.ve.size() != n)
    fail(Err::ConfigError, "discrete instance arrays must share one length");
  if (need_w && inst.w.size() != n)
    fail(Err::ConfigError, "monotone evaluation needs biomarker values per support point");
  for (std::size_t j = 0; j < n; ++j) {
    if (inst.prob[j] < 0.0) fail(Err::ConfigError, "negative probability mass");
    if (!(inst.lam[j] <= inst.ups[j])) fail(Err::ConfigError, "lambda exceeds upsilon");
    if (!std::isfinite(inst.ve[j])) fail(Err::ConfigError, "non-finite efficacy value");
  }
}

PopulationResult evaluate(const DiscreteInstance& inst, double mu,
                          const std::vector<double>& keys, bool monotone_ve_multiplier) {
  check_instance(inst, false);
  const std::size_t n = inst.prob.size();
  double total_mass = 0.0;
  for (double p : inst.prob) total_mass += p;
  if (!(total_mass > 0.0)) fail(Err::ConfigError, "zero total probability mass");

  std::vector<double> p(n);
  for (std::size_t j = 0; j < n; ++j) p[j] = inst.prob[j] / total_mass;

  double base = 0.0;
  std::vector<std::pair<double, double>> points;
  points.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    base += p[j] * inst.lam[j];
    points.emplace_back(keys[j], p[j] * (inst.ups[j] - inst.lam[j]));
  }
  ScanOutcome scan = threshold_scan(std::move(points), base, mu);

  PopulationResult out;
  out.theta = scan.theta;
  out.eta = scan.eta;
  out.tag = scan.tag;

  auto beta = [&](double key) {
    if (key < scan.theta) return 1.0;
    if (key == scan.theta) return scan.eta;
    return 0.0;
  };
  // extended precision keeps the bound exactly monotone across mu grids
  // (plateau pieces would otherwise wobble by an ulp)
  long double omega = 0.0L, gamma = 0.0L;
  std::vector<double> ur(n);
  for (std::size_t j = 0; j < n; ++j) {
    ur[j] = inst.lam[j] + (inst.ups[j] - inst.lam[j]) * beta(keys[j]);
    omega += static_cast<long double>(p[j]) * ur[j];
    gamma += static_cast<long double>(p[j]) * ur[j] * inst.ve[j];
  }
  if (!(omega > 0.0L))
    fail(Err::InfeasibleMu, "worst-case marginal unvaccinated risk is zero at mu=" +
                                std::to_string(mu));
  out.omega = static_cast<double>(omega);
  out.gamma = static_cast<double>(gamma);
  out.phi = static_cast<double>(gamma / omega);

  // interior gradient multiplier: the threshold itself for the standard
  // parameter, the efficacy value at the biomarker threshold otherwise
  const bool interior = scan.value_beta0 < mu && mu < scan.value_beta1;
  double multiplier = scan.theta;
  if (monotone_ve_multiplier && std::isfinite(scan.theta)) {
    for (std::size_t j = 0; j < n; ++j) {
      if (keys[j] == scan.theta) {
        multiplier = inst.ve[j];
        break;
      }
    }
  }
  out.grad.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    double domega = ur[j] - out.omega;
    double dgamma = ur[j] * inst.ve[j] - out.gamma;
    out.grad[j] = interior ? (dgamma - multiplier * domega) / out.omega
                           : dgamma / out.omega - out.gamma * domega / (out.omega * out.omega);
  }
  return out;
}

}  // namespace

PopulationResult population_phi(const DiscreteInstance& inst, double mu) {
  check_instance(inst, false);
  return evaluate(inst, mu, inst.ve, false);
}

PopulationResult population_phi_monotone(const DiscreteInstance& inst, double mu,
                                         bool increasing) {
  check_instance(inst, true);
  std::vector<double> keys = inst.w;
  if (!increasing)
    for (double& k : keys) k = -k;
  PopulationResult out = evaluate(inst, mu, keys, true);
  if (std::isfinite(out.theta) && !increasing) out.theta = -out.theta;
  return out;
}

}  // namespace vebridge
