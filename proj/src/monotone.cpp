#include "vebridge/monotone.hpp"

#include <cmath>

namespace vebridge {

MonotoneAllocation solve_allocation_monotone(const BridgeContext& ctx, double mu,
                                             bool increasing) {
  // identical scan machinery; breakpoints are the observed biomarker values
  // (negated for a decreasing efficacy curve so low-efficacy strata fill first)
  auto key = [&](double w) { return increasing ? w : -w; };

  double base = 0.0;
  std::vector<std::pair<double, double>> points;
  const double n_star = static_cast<double>(ctx.n_star);
  double star_lam = 0.0;
  for (std::size_t i = 0; i < ctx.star.w.size(); ++i) {
    star_lam += ctx.star.lam[i];
    points.emplace_back(key(ctx.star.w[i]), (ctx.star.ups[i] - ctx.star.lam[i]) / n_star);
  }
  base += star_lam / n_star;

  for (std::size_t s = 0; s < ctx.S; ++s) {
    const auto& tb = ctx.trials[s];
    const double ns = static_cast<double>(ctx.n_trial[s]);
    double acc = 0.0;
    for (std::size_t i = 0; i < tb.w.size(); ++i) {
      if (!tb.obs[i]) continue;
      double db = tb.a[i] == 0 ? (tb.y[i] - tb.m0own[i]) / (1.0 - tb.g[i]) : 0.0;
      acc += tb.wgt[i] * tb.r[i] * tb.ell[i] * db;
      points.emplace_back(key(tb.w[i]), tb.wgt[i] * tb.r[i] * (tb.uu[i] - tb.ell[i]) * db / ns);
    }
    base += acc / ns;
  }

  ScanOutcome scan = threshold_scan(std::move(points), base, mu);
  MonotoneAllocation out;
  out.increasing = increasing;
  out.alloc.theta = scan.theta;
  out.alloc.eta = scan.eta;
  out.alloc.tag = scan.tag;
  out.alloc.omega_beta0 = scan.value_beta0;
  out.alloc.omega_beta1 = scan.value_beta1;
  if (scan.tag == CaseTag::MuTooBig) {
    out.theta_w = kInf;
  } else if (scan.tag == CaseTag::MuTooSmall) {
    out.theta_w = -kInf;
  } else {
    out.theta_w = increasing ? scan.theta : -scan.theta;
  }
  return out;
}

BridgeEstimate phi_estimate_monotone(const BridgeContext& ctx, double mu, bool increasing) {
  MonotoneAllocation mono = solve_allocation_monotone(ctx, mu, increasing);
  double multiplier = 0.0;
  if (std::isfinite(mono.theta_w)) multiplier = ctx.ve_at(mono.theta_w);
  BridgeEstimate est =
      estimate_with_allocation(ctx, mu, mono.alloc, multiplier, true, !increasing);
  est.monotone = true;
  est.theta_w = mono.theta_w;
  return est;
}

}  // namespace vebridge
