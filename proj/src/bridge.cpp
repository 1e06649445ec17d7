#include "vebridge/bridge.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>

#include "vebridge/errors.hpp"
#include "vebridge/learners.hpp"

namespace vebridge {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double safe_logit(double p) { return logit(std::clamp(p, 1e-12, 1.0 - 1e-12)); }

}  // namespace

NuisanceFuncs as_funcs(const NuisanceSet& fits) {
  NuisanceFuncs out;
  for (const auto& t : fits.trials) {
    TrialFuncs f;
    f.m = [reg = t.m](int a, double w) { return reg(a, w); };
    f.g = [prop = t.g](double w) { return prop(w); };
    f.r = [ratio = t.r](double w) { return ratio(w); };
    out.trials.push_back(std::move(f));
  }
  return out;
}

const char* case_name(CaseTag tag) {
  switch (tag) {
    case CaseTag::Interior: return "interior";
    case CaseTag::MuTooBig: return "mu_too_big";
    case CaseTag::MuTooSmall: return "mu_too_small";
  }
  return "unknown";
}

VeMinusCurve ve_minus(const NuisanceFuncs& nuis, const ValidatedBounds& bounds,
                      const MultiTrialData& data, const ClipConfig& clips) {
  const auto& spec = bounds.spec;
  const std::size_t S = nuis.trials.size();
  if (spec.vv.size() != S + 1) fail(Err::ConfigError, "v-weights do not match trial count");

  VeMinusCurve curve;
  curve.floor = clips.ve_floor;
  curve.eval = [&nuis, spec, S, floor = clips.ve_floor](double w) {
    double num = spec.vv[0](w) * spec.d1(w);
    double den = spec.vv[0](w) * spec.d0(w);
    for (std::size_t s = 0; s < S; ++s) {
      num += spec.vv[s + 1](w) * nuis.trials[s].m(1, w);
      den += spec.vv[s + 1](w) * nuis.trials[s].m(0, w);
    }
    if (!(den > 0.0)) fail(Err::ZeroDenominator, "efficacy-floor denominator vanishes at w=" + fmt(w));
    return std::max(1.0 - num / den, floor);
  };
  // surface denominator problems on the observed support immediately
  for (double w : validation_grid(data)) curve.eval(w);
  return curve;
}

RiskEnvelope risk_envelope(const NuisanceFuncs& nuis, const ValidatedBounds& bounds,
                           const MultiTrialData& data) {
  const auto& spec = bounds.spec;
  const std::size_t S = nuis.trials.size();
  RiskEnvelope env;
  env.lambda = [&nuis, spec, S](double w) {
    double v = spec.ell[0](w);
    for (std::size_t s = 0; s < S; ++s) v += spec.ell[s + 1](w) * nuis.trials[s].m(0, w);
    return v;
  };
  env.upsilon = [&nuis, spec, S](double w) {
    double v = spec.uu[0](w);
    for (std::size_t s = 0; s < S; ++s) v += spec.uu[s + 1](w) * nuis.trials[s].m(0, w);
    return v;
  };
  for (double w : validation_grid(data)) {
    double lam = env.lambda(w), ups = env.upsilon(w);
    if (!(lam <= ups - spec.delta_min))
      fail(Err::OrderViolation, "risk envelope violates the separation floor at w=" + fmt(w) +
                                    " (lambda=" + fmt(lam) + ", upsilon=" + fmt(ups) + ")");
    if (lam < -1e-12 || ups > 1.0 + 1e-12) env.unit_range_warning = true;
  }
  return env;
}

// ---------------------------------------------------------------------------
// fluctuation

FluctuationResult fluctuate(const MultiTrialData& data, const NuisanceFuncs& nuis,
                            const ValidatedBounds& bounds,
                            const std::vector<std::vector<double>>& trial_weights) {
  const std::size_t S = data.num_trials();
  FluctuationResult res;
  res.path = bounds.path;

  // pooled control-arm records; vaccinated records carry zero covariate and
  // do not move the score
  std::vector<double> cov_u, cov_l, offset, weight;
  std::vector<int> y;
  for (std::size_t s = 0; s < S; ++s) {
    const auto& trial = data.trials[s];
    const double ns = static_cast<double>(trial.size());
    const std::vector<double>* wgt =
        (s < trial_weights.size() && !trial_weights[s].empty()) ? &trial_weights[s] : nullptr;
    for (std::size_t i = 0; i < trial.records.size(); ++i) {
      const auto& rec = trial.records[i];
      if (!rec.observed() || rec.a != 0) continue;
      double wi = wgt ? (*wgt)[i] : 1.0;
      if (wi <= 0.0) continue;
      double w = *rec.w;
      double r = nuis.trials[s].r(w);
      double g0 = 1.0 - nuis.trials[s].g(w);
      double hu = bounds.spec.uu[s + 1](w) * r / (ns * g0);
      cov_u.push_back(hu);
      if (bounds.path == FluctuationPath::Bivariate)
        cov_l.push_back(bounds.spec.ell[s + 1](w) * r / (ns * g0));
      offset.push_back(safe_logit(nuis.trials[s].m(0, w)));
      y.push_back(rec.y);
      weight.push_back(wi);
    }
  }

  if (!cov_u.empty()) {
    auto [lo, hi] = std::minmax_element(cov_u.begin(), cov_u.end());
    res.hu_lo = *lo;
    res.hu_hi = *hi;
  }
  if (!cov_l.empty()) {
    auto [lo, hi] = std::minmax_element(cov_l.begin(), cov_l.end());
    res.hl_lo = *lo;
    res.hl_hi = *hi;
  }

  std::vector<std::vector<double>> covs;
  if (bounds.path == FluctuationPath::Bivariate) covs.push_back(std::move(cov_l));
  covs.push_back(std::move(cov_u));

  OffsetLogisticFit fit = fit_offset_logistic(covs, offset, y, weight, 1e-10, 200);
  if (!fit.converged) {
    // degrade to a pure one-step estimator
    res.eps_u = 0.0;
    res.eps_l = 0.0;
    res.converged = false;
    res.score_norm = fit.final_score;
    return res;
  }
  if (bounds.path == FluctuationPath::Bivariate) {
    res.eps_l = fit.eps[0];
    res.eps_u = fit.eps[1];
  } else {
    res.eps_u = fit.eps.empty() ? 0.0 : fit.eps[0];
  }
  res.converged = true;
  res.score_norm = fit.final_score;
  return res;
}

// ---------------------------------------------------------------------------
// context

double BridgeContext::ve_at(double w) const {
  const auto& spec = bounds.spec;
  double num = spec.vv[0](w) * spec.d1(w);
  double den = spec.vv[0](w) * spec.d0(w);
  for (std::size_t s = 0; s < S; ++s) {
    num += spec.vv[s + 1](w) * m1(s, w);
    den += spec.vv[s + 1](w) * m0eps(s, w);
  }
  if (!(den > 0.0)) fail(Err::ZeroDenominator, "efficacy-floor denominator vanishes at w=" + fmt(w));
  return std::max(1.0 - num / den, ve_floor);
}

namespace {

//! Rebuild every convex-weight-dependent table from the current vv.
void refresh_weight_tables(BridgeContext& ctx) {
  const auto& vv = ctx.bounds.spec.vv;
  const std::size_t S = ctx.S;

  auto fill_point = [&](double w, const std::vector<std::vector<double>>& m0,
                        const std::vector<std::vector<double>>& m1, double d0, double d1,
                        std::size_t i, std::vector<std::vector<double>>& vsv, double& ve_out,
                        double* vden_out) {
    double num = vv[0](w) * d1;
    double den = vv[0](w) * d0;
    vsv[0][i] = vv[0](w);
    for (std::size_t s = 0; s < S; ++s) {
      double vs = vv[s + 1](w);
      vsv[s + 1][i] = vs;
      num += vs * m1[s][i];
      den += vs * m0[s][i];
    }
    if (!(den > 0.0))
      fail(Err::ZeroDenominator, "efficacy-floor denominator vanishes at w=" + fmt(w));
    ve_out = std::max(1.0 - num / den, ctx.ve_floor);
    if (vden_out) *vden_out = den;
  };

  auto& st = ctx.star;
  for (std::size_t i = 0; i < st.w.size(); ++i)
    fill_point(st.w[i], st.m0, st.m1, st.d0[i], st.d1[i], i, st.vsv, st.ve[i], nullptr);

  for (std::size_t s = 0; s < S; ++s) {
    auto& tb = ctx.trials[s];
    for (std::size_t i = 0; i < tb.w.size(); ++i) {
      if (!tb.obs[i]) continue;
      fill_point(tb.w[i], tb.m0all, tb.m1all, tb.d0[i], tb.d1[i], i, tb.vsv, tb.ve[i],
                 &tb.vden[i]);
      tb.vs[i] = tb.vsv[s + 1][i];
    }
  }
}

}  // namespace

BridgeContext build_context(const MultiTrialData& data, const NuisanceFuncs& nuis,
                            const ValidatedBounds& bounds, const AnalysisConfig& cfg,
                            const std::vector<std::vector<double>>& trial_weights) {
  const std::size_t S = data.num_trials();
  if (nuis.trials.size() != S) fail(Err::ConfigError, "nuisance set does not match trial count");

  BridgeContext ctx;
  ctx.S = S;
  ctx.n_star = data.n_star();
  for (const auto& t : data.trials) ctx.n_trial.push_back(t.size());
  ctx.n_min = static_cast<double>(data.n_min());
  ctx.z = cfg.z;
  ctx.ve_floor = cfg.clips.ve_floor;
  ctx.delta_min = bounds.spec.delta_min;
  ctx.bounds = bounds;
  ctx.fluct = fluctuate(data, nuis, bounds, trial_weights);

  // fluctuated control-arm regression; only the a = 0 arm moves, and the
  // clever covariate extrapolates flat beyond its fitted range
  const FluctuationResult fl = ctx.fluct;
  std::vector<double> ns(S);
  for (std::size_t s = 0; s < S; ++s) ns[s] = static_cast<double>(data.trials[s].size());
  auto spec = bounds.spec;
  ctx.m0eps = [nuis, spec, ns, fl](std::size_t s, double w) {
    double r = nuis.trials[s].r(w);
    double g0 = 1.0 - nuis.trials[s].g(w);
    double cap_u = std::max(std::abs(fl.hu_lo), std::abs(fl.hu_hi));
    double hu = std::clamp(spec.uu[s + 1](w) * r / (ns[s] * g0), -cap_u, cap_u);
    double h = fl.eps_u * hu;
    if (fl.eps_l != 0.0) {
      double cap_l = std::max(std::abs(fl.hl_lo), std::abs(fl.hl_hi));
      h += fl.eps_l * std::clamp(spec.ell[s + 1](w) * r / (ns[s] * g0), -cap_l, cap_l);
    }
    return expit(safe_logit(nuis.trials[s].m(0, w)) + h);
  };
  ctx.m1 = [nuis](std::size_t s, double w) { return nuis.trials[s].m(1, w); };

  auto envelope_at = [&](double w, double* lam, double* ups,
                         const std::vector<std::vector<double>>& m0, std::size_t i) {
    double l = spec.ell[0](w), u = spec.uu[0](w);
    for (std::size_t s = 0; s < S; ++s) {
      l += spec.ell[s + 1](w) * m0[s][i];
      u += spec.uu[s + 1](w) * m0[s][i];
    }
    if (!(l <= u - spec.delta_min))
      fail(Err::OrderViolation, "risk envelope violates the separation floor at w=" + fmt(w) +
                                    " (lambda=" + fmt(l) + ", upsilon=" + fmt(u) + ")");
    if (l < -1e-12 || u > 1.0 + 1e-12) ctx.envelope_warning = true;
    *lam = l;
    *ups = u;
  };

  // star block
  auto& st = ctx.star;
  st.w = data.star_w;
  const std::size_t n_star = st.w.size();
  st.m0.assign(S, std::vector<double>(n_star, 0.0));
  st.m1.assign(S, std::vector<double>(n_star, 0.0));
  st.vsv.assign(S + 1, std::vector<double>(n_star, 0.0));
  st.d0.resize(n_star);
  st.d1.resize(n_star);
  st.lam.resize(n_star);
  st.ups.resize(n_star);
  st.ve.resize(n_star);
  for (std::size_t i = 0; i < n_star; ++i) {
    double w = st.w[i];
    for (std::size_t s = 0; s < S; ++s) {
      st.m0[s][i] = ctx.m0eps(s, w);
      st.m1[s][i] = ctx.m1(s, w);
    }
    st.d0[i] = spec.d0(w);
    st.d1[i] = spec.d1(w);
    envelope_at(w, &st.lam[i], &st.ups[i], st.m0, i);
  }

  // trial blocks keep one row per phase-1 record; unobserved rows carry
  // zero weight and zero tables so every downstream sum skips them cleanly
  ctx.trials.resize(S);
  for (std::size_t s = 0; s < S; ++s) {
    const auto& trial = data.trials[s];
    auto& tb = ctx.trials[s];
    const std::size_t n = trial.size();
    const std::vector<double>* wgt =
        (s < trial_weights.size() && !trial_weights[s].empty()) ? &trial_weights[s] : nullptr;
    tb.obs.assign(n, 0);
    tb.w.assign(n, 0.0);
    tb.wgt.assign(n, 0.0);
    tb.a.assign(n, 0);
    tb.y.assign(n, 0);
    for (auto* v : {&tb.r, &tb.g, &tb.m0own, &tb.m1own, &tb.ell, &tb.uu, &tb.vs, &tb.lam, &tb.ups,
                    &tb.ve, &tb.vden, &tb.d0, &tb.d1})
      v->assign(n, 0.0);
    tb.m0all.assign(S, std::vector<double>(n, 0.0));
    tb.m1all.assign(S, std::vector<double>(n, 0.0));
    tb.vsv.assign(S + 1, std::vector<double>(n, 0.0));

    for (std::size_t i = 0; i < n; ++i) {
      const auto& rec = trial.records[i];
      if (!rec.observed()) continue;
      tb.obs[i] = 1;
      double w = *rec.w;
      tb.w[i] = w;
      tb.a[i] = rec.a;
      tb.y[i] = rec.y;
      tb.wgt[i] = wgt ? (*wgt)[i] : 1.0;
      tb.r[i] = nuis.trials[s].r(w);
      tb.g[i] = nuis.trials[s].g(w);
      for (std::size_t s2 = 0; s2 < S; ++s2) {
        tb.m0all[s2][i] = ctx.m0eps(s2, w);
        tb.m1all[s2][i] = ctx.m1(s2, w);
      }
      tb.m0own[i] = tb.m0all[s][i];
      tb.m1own[i] = tb.m1all[s][i];
      tb.ell[i] = spec.ell[s + 1](w);
      tb.uu[i] = spec.uu[s + 1](w);
      tb.d0[i] = spec.d0(w);
      tb.d1[i] = spec.d1(w);
      envelope_at(w, &tb.lam[i], &tb.ups[i], tb.m0all, i);
    }
  }

  refresh_weight_tables(ctx);

  // post-update pooled omega-scores at the constant allocations
  double sb1 = 0.0, sb0 = 0.0;
  for (std::size_t s = 0; s < S; ++s) {
    const auto& tb = ctx.trials[s];
    double acc1 = 0.0, acc0 = 0.0;
    for (std::size_t i = 0; i < tb.w.size(); ++i) {
      if (!tb.obs[i] || tb.a[i] != 0) continue;
      double resid = tb.wgt[i] * tb.r[i] * (tb.y[i] - tb.m0own[i]) / (1.0 - tb.g[i]);
      acc1 += tb.uu[i] * resid;
      acc0 += tb.ell[i] * resid;
    }
    sb1 += acc1 / static_cast<double>(ctx.n_trial[s]);
    sb0 += acc0 / static_cast<double>(ctx.n_trial[s]);
  }
  ctx.score_beta1 = sb1;
  ctx.score_beta0 = sb0;
  return ctx;
}

void set_convex_weights(BridgeContext& ctx, const std::vector<double>& v_trials) {
  if (v_trials.size() != ctx.S) fail(Err::ConfigError, "weight vector does not match trial count");
  double sum = 0.0;
  for (double v : v_trials) {
    if (v < 0.0) fail(Err::ConfigError, "convex weights must be nonnegative");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-10) fail(Err::ConvexityViolation, "convex weights must sum to 1");
  std::vector<BoundFunc> vv;
  vv.emplace_back(0.0);
  for (double v : v_trials) vv.emplace_back(v);
  ctx.bounds.spec.vv = std::move(vv);
  refresh_weight_tables(ctx);
}

// ---------------------------------------------------------------------------
// allocation

ScanOutcome threshold_scan(std::vector<std::pair<double, double>> key_jump, double base,
                           double mu) {
  std::sort(key_jump.begin(), key_jump.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  // group bit-exact ties
  std::vector<double> keys, jumps;
  for (const auto& [k, j] : key_jump) {
    if (!keys.empty() && keys.back() == k) {
      jumps.back() += j;
    } else {
      keys.push_back(k);
      jumps.push_back(j);
    }
  }
  const std::size_t m = keys.size();

  // extended-precision prefixes keep plateau pieces bitwise flat when the
  // interpolated eta is folded back into the risk map
  ScanOutcome out;
  out.value_beta0 = base;
  long double total = base;
  for (double j : jumps) total += j;
  out.value_beta1 = static_cast<double>(total);

  if (total <= static_cast<long double>(mu)) {
    out.theta = kInf;
    out.eta = 0.0;
    out.tag = CaseTag::MuTooBig;
    return out;
  }
  // prefix value of the map on piece j (theta in (key_{j-1}, key_j]):
  // pieces j = 0..m-1 examined for the highest satisfying one
  long double prefix = base;
  bool found = false;
  std::size_t best_j = 0;
  long double best_prefix = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    if (prefix <= static_cast<long double>(mu)) {
      found = true;
      best_j = j;
      best_prefix = prefix;
    }
    prefix += jumps[j];
  }
  if (!found) {
    out.theta = -kInf;
    out.eta = 0.0;
    out.tag = CaseTag::MuTooSmall;
    return out;
  }
  out.theta = keys[best_j];
  out.tag = CaseTag::Interior;
  long double b = jumps[best_j];
  // the tie-group jump is strictly positive whenever the next piece
  // overshoots; the guard covers exact floating-point cancellation
  long double eta = b != 0.0L ? (static_cast<long double>(mu) - best_prefix) / b : 0.0L;
  out.eta = static_cast<double>(std::clamp(eta, 0.0L, 1.0L));
  return out;
}

namespace {

double dur_base(const BridgeContext::TrialBlock& tb, std::size_t i) {
  if (tb.a[i] != 0) return 0.0;
  return (tb.y[i] - tb.m0own[i]) / (1.0 - tb.g[i]);
}

}  // namespace

double omega_hat(const BridgeContext& ctx, const std::function<double(double)>& beta) {
  double star_sum = 0.0;
  for (std::size_t i = 0; i < ctx.star.w.size(); ++i) {
    double b = beta(ctx.star.w[i]);
    star_sum += ctx.star.lam[i] + (ctx.star.ups[i] - ctx.star.lam[i]) * b;
  }
  double omega = star_sum / static_cast<double>(ctx.n_star);
  for (std::size_t s = 0; s < ctx.S; ++s) {
    const auto& tb = ctx.trials[s];
    double acc = 0.0;
    for (std::size_t i = 0; i < tb.w.size(); ++i) {
      if (!tb.obs[i] || tb.a[i] != 0) continue;
      double b = beta(tb.w[i]);
      acc += tb.wgt[i] * tb.r[i] * (tb.ell[i] + b * (tb.uu[i] - tb.ell[i])) * dur_base(tb, i);
    }
    omega += acc / static_cast<double>(ctx.n_trial[s]);
  }
  return omega;
}

WorstCaseAllocation solve_allocation(const BridgeContext& ctx, double mu) {
  // base = corrected map at beta == 0; breakpoints at every distinct fitted
  // efficacy value across the target and trial samples
  double base = 0.0;
  std::vector<std::pair<double, double>> points;
  points.reserve(ctx.star.w.size() + 1024);

  double star_lam = 0.0;
  const double n_star = static_cast<double>(ctx.n_star);
  for (std::size_t i = 0; i < ctx.star.w.size(); ++i) {
    star_lam += ctx.star.lam[i];
    points.emplace_back(ctx.star.ve[i], (ctx.star.ups[i] - ctx.star.lam[i]) / n_star);
  }
  base += star_lam / n_star;

  for (std::size_t s = 0; s < ctx.S; ++s) {
    const auto& tb = ctx.trials[s];
    const double ns = static_cast<double>(ctx.n_trial[s]);
    double acc = 0.0;
    for (std::size_t i = 0; i < tb.w.size(); ++i) {
      if (!tb.obs[i]) continue;
      double db = dur_base(tb, i);
      acc += tb.wgt[i] * tb.r[i] * tb.ell[i] * db;
      points.emplace_back(tb.ve[i], tb.wgt[i] * tb.r[i] * (tb.uu[i] - tb.ell[i]) * db / ns);
    }
    base += acc / ns;
  }

  ScanOutcome scan = threshold_scan(std::move(points), base, mu);
  WorstCaseAllocation alloc;
  alloc.theta = scan.theta;
  alloc.eta = scan.eta;
  alloc.tag = scan.tag;
  alloc.omega_beta0 = scan.value_beta0;
  alloc.omega_beta1 = scan.value_beta1;
  return alloc;
}

namespace {

//! Shared accumulation of the one-step estimates and gradient ingredients
//! for a fixed allocation keyed on either the efficacy values or (monotone
//! variant) the biomarker itself.
struct EstimateCore {
  double omega = 0.0, gamma = 0.0;
  std::vector<double> star_ur, star_urve;  // allocation tables at star points
  // per trial: unweighted gradient cores (multiplied by wgt at the end)
  std::vector<std::vector<double>> trial_domega, trial_dgamma;
};

EstimateCore accumulate(const BridgeContext& ctx, const WorstCaseAllocation& alloc,
                        bool key_on_w, bool key_negated) {
  auto key_star = [&](std::size_t i) {
    return key_on_w ? (key_negated ? -ctx.star.w[i] : ctx.star.w[i]) : ctx.star.ve[i];
  };
  EstimateCore core;
  const double n_star = static_cast<double>(ctx.n_star);
  core.star_ur.resize(ctx.star.w.size());
  core.star_urve.resize(ctx.star.w.size());
  double sum_ur = 0.0, sum_urve = 0.0;
  for (std::size_t i = 0; i < ctx.star.w.size(); ++i) {
    double b = alloc.beta(key_star(i));
    double ur = ctx.star.lam[i] + (ctx.star.ups[i] - ctx.star.lam[i]) * b;
    core.star_ur[i] = ur;
    core.star_urve[i] = ur * ctx.star.ve[i];
    sum_ur += ur;
    sum_urve += core.star_urve[i];
  }
  core.omega = sum_ur / n_star;
  core.gamma = sum_urve / n_star;

  core.trial_domega.resize(ctx.S);
  core.trial_dgamma.resize(ctx.S);
  for (std::size_t s = 0; s < ctx.S; ++s) {
    const auto& tb = ctx.trials[s];
    const double ns = static_cast<double>(ctx.n_trial[s]);
    auto& dom = core.trial_domega[s];
    auto& dga = core.trial_dgamma[s];
    dom.assign(tb.w.size(), 0.0);
    dga.assign(tb.w.size(), 0.0);
    double acc_o = 0.0, acc_g = 0.0;
    for (std::size_t i = 0; i < tb.w.size(); ++i) {
      if (!tb.obs[i]) continue;
      double key = key_on_w ? (key_negated ? -tb.w[i] : tb.w[i]) : tb.ve[i];
      double b = alloc.beta(key);
      double ur = tb.lam[i] + (tb.ups[i] - tb.lam[i]) * b;
      double dur = (tb.ell[i] + b * (tb.uu[i] - tb.ell[i])) * dur_base(tb, i);
      double dve;
      if (tb.a[i] == 0) {
        dve = tb.vs[i] * tb.ve[i] * (tb.y[i] - tb.m0own[i]) / ((1.0 - tb.g[i]) * tb.vden[i]);
      } else {
        dve = -tb.vs[i] * (tb.y[i] - tb.m1own[i]) / (tb.g[i] * tb.vden[i]);
      }
      dom[i] = tb.r[i] * dur;
      dga[i] = tb.r[i] * (dur * tb.ve[i] + ur * dve);
      acc_o += tb.wgt[i] * dom[i];
      acc_g += tb.wgt[i] * dga[i];
    }
    core.omega += acc_o / ns;
    core.gamma += acc_g / ns;
  }
  return core;
}

BridgeEstimate finish_estimate(const BridgeContext& ctx, double mu,
                               const WorstCaseAllocation& alloc, const EstimateCore& core,
                               double interior_multiplier, bool key_on_w, bool key_negated) {
  BridgeEstimate est;
  est.mu = mu;
  est.alloc = alloc;
  est.omega = core.omega;
  est.gamma = core.gamma;
  if (!(est.omega > 0.0))
    fail(Err::ZeroOmega, "one-step unvaccinated-risk estimate is not positive (omega=" +
                             fmt(est.omega) + "); mu=" + fmt(mu) + " is infeasible");
  est.phi = est.gamma / est.omega;

  const bool interior = alloc.omega_beta0 < mu && mu < alloc.omega_beta1;
  est.interior_gradient = interior;

  // star gradients centered at the empirical target means, so the
  // target-sample average vanishes by construction
  const double n_star = static_cast<double>(ctx.n_star);
  double mean_ur = 0.0, mean_urve = 0.0;
  for (double v : core.star_ur) mean_ur += v;
  for (double v : core.star_urve) mean_urve += v;
  mean_ur /= n_star;
  mean_urve /= n_star;

  auto phi_grad = [&](double domega, double dgamma) {
    if (interior) return (dgamma - interior_multiplier * domega) / est.omega;
    return dgamma / est.omega - est.gamma * domega / (est.omega * est.omega);
  };

  est.grad_star.resize(ctx.star.w.size());
  for (std::size_t i = 0; i < ctx.star.w.size(); ++i)
    est.grad_star[i] = phi_grad(core.star_ur[i] - mean_ur, core.star_urve[i] - mean_urve);

  est.grad_trial.resize(ctx.S);
  for (std::size_t s = 0; s < ctx.S; ++s) {
    const auto& tb = ctx.trials[s];
    est.grad_trial[s].assign(tb.w.size(), 0.0);
    for (std::size_t i = 0; i < tb.w.size(); ++i) {
      if (!tb.obs[i]) continue;
      est.grad_trial[s][i] =
          tb.wgt[i] * phi_grad(core.trial_domega[s][i], core.trial_dgamma[s][i]);
    }
  }

  // per-source empirical variances of the centered gradients
  est.sigma2.assign(ctx.S + 1, 0.0);
  {
    double mean = 0.0;
    for (double gst : est.grad_star) mean += gst;
    mean /= n_star;
    double acc = 0.0;
    for (double gst : est.grad_star) acc += (gst - mean) * (gst - mean);
    est.sigma2[0] = acc / n_star;
  }
  for (std::size_t s = 0; s < ctx.S; ++s) {
    const double ns = static_cast<double>(ctx.n_trial[s]);
    double mean = 0.0;
    for (double gv : est.grad_trial[s]) mean += gv;
    mean /= ns;
    double acc = 0.0;
    for (double gv : est.grad_trial[s]) acc += (gv - mean) * (gv - mean);
    est.sigma2[s + 1] = acc / ns;
  }
  double pooled = (ctx.n_min / n_star) * est.sigma2[0];
  for (std::size_t s = 0; s < ctx.S; ++s)
    pooled += (ctx.n_min / static_cast<double>(ctx.n_trial[s])) * est.sigma2[s + 1];
  est.sigma_n = std::sqrt(pooled);
  est.lcb = lower_confidence_bound(est.phi, est.sigma_n, ctx.n_min, ctx.z);

  est.score_residual = std::abs(ctx.score_beta1);
  est.omega_gap = std::abs(est.omega - mu);
  est.envelope_flag = ctx.envelope_warning;
  est.fluctuation_diverged = !ctx.fluct.converged;

  // attainability caveat: the reported bound is not a plug-in, so flag
  // configurations whose implied vaccinated risk leaves the unit interval
  est.phi_flag = est.phi > 1.0;
  for (std::size_t i = 0; i < core.star_ur.size() && !est.phi_flag; ++i) {
    double vac = core.star_ur[i] * (1.0 - ctx.star.ve[i]);
    if (vac < -1e-12 || vac > 1.0 + 1e-12) est.phi_flag = true;
  }
  (void)key_on_w;
  (void)key_negated;
  return est;
}

}  // namespace

double gamma_hat(const BridgeContext& ctx, const WorstCaseAllocation& alloc) {
  return accumulate(ctx, alloc, false, false).gamma;
}

BridgeEstimate estimate_with_allocation(const BridgeContext& ctx, double mu,
                                        const WorstCaseAllocation& alloc,
                                        double interior_multiplier, bool key_on_w,
                                        bool key_negated) {
  EstimateCore core = accumulate(ctx, alloc, key_on_w, key_negated);
  return finish_estimate(ctx, mu, alloc, core, interior_multiplier, key_on_w, key_negated);
}

BridgeEstimate phi_estimate(const BridgeContext& ctx, double mu) {
  WorstCaseAllocation alloc = solve_allocation(ctx, mu);
  return estimate_with_allocation(ctx, mu, alloc, alloc.theta, false, false);
}

double lower_confidence_bound(double phi, double sigma_n, double n_min, double z) {
  return phi - z * sigma_n / std::sqrt(n_min);
}

MuFeasibleRange mu_feasible_range(const BridgeContext& ctx) {
  MuFeasibleRange out;
  auto variance_at = [&](double beta_const, double omega_value) {
    const double n_star = static_cast<double>(ctx.n_star);
    double mean_ur = 0.0;
    std::vector<double> star_vals(ctx.star.w.size());
    for (std::size_t i = 0; i < ctx.star.w.size(); ++i) {
      star_vals[i] = ctx.star.lam[i] + (ctx.star.ups[i] - ctx.star.lam[i]) * beta_const;
      mean_ur += star_vals[i];
    }
    mean_ur /= n_star;
    double acc = 0.0;
    for (double v : star_vals) acc += (v - mean_ur) * (v - mean_ur);
    double pooled = (ctx.n_min / n_star) * (acc / n_star);
    for (std::size_t s = 0; s < ctx.S; ++s) {
      const auto& tb = ctx.trials[s];
      const double ns = static_cast<double>(ctx.n_trial[s]);
      double mean = 0.0;
      std::vector<double> vals(tb.w.size(), 0.0);
      for (std::size_t i = 0; i < tb.w.size(); ++i) {
        if (!tb.obs[i]) continue;
        double coef = tb.ell[i] + beta_const * (tb.uu[i] - tb.ell[i]);
        vals[i] = tb.wgt[i] * tb.r[i] * coef * dur_base(tb, i);
        mean += vals[i];
      }
      mean /= ns;
      double a2 = 0.0;
      for (double v : vals) a2 += (v - mean) * (v - mean);
      pooled += (ctx.n_min / ns) * (a2 / ns);
    }
    (void)omega_value;
    return std::sqrt(pooled);
  };

  auto const_beta = [](double b) { return [b](double) { return b; }; };
  out.lo = omega_hat(ctx, const_beta(0.0));
  out.hi = omega_hat(ctx, const_beta(1.0));
  double sd0 = variance_at(0.0, out.lo);
  double sd1 = variance_at(1.0, out.hi);
  double scale = ctx.z / std::sqrt(ctx.n_min);
  out.lo_lcb = out.lo - scale * sd0;
  out.hi_ucb = out.hi + scale * sd1;
  return out;
}

CurveResult curve(const BridgeContext& ctx, const std::vector<double>& mu_grid, int threads) {
  CurveResult res;
  res.rows.resize(mu_grid.size());
  auto eval_row = [&](std::size_t i) {
    CurveRow& row = res.rows[i];
    row.mu = mu_grid[i];
    try {
      row.est = phi_estimate(ctx, mu_grid[i]);
      row.ok = true;
    } catch (const Error& e) {
      row.ok = false;
      row.error = err_name(e.code());
    }
  };
  if (threads <= 1 || mu_grid.size() < 2) {
    for (std::size_t i = 0; i < mu_grid.size(); ++i) eval_row(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    int nthreads = std::min<std::size_t>(threads, mu_grid.size());
    for (int t = 0; t < nthreads; ++t) {
      pool.emplace_back([&]() {
        for (;;) {
          std::size_t i = next.fetch_add(1);
          if (i >= res.rows.size()) return;
          eval_row(i);
        }
      });
    }
    for (auto& th : pool) th.join();
  }
  res.min_lcb = kInf;
  for (const auto& row : res.rows) {
    if (!row.ok) continue;
    res.any_ok = true;
    res.min_lcb = std::min(res.min_lcb, row.est.lcb);
  }
  if (!res.any_ok) res.min_lcb = std::numeric_limits<double>::quiet_NaN();
  return res;
}

namespace {

std::string fmt_theta(double theta) {
  if (theta == kInf) return "+inf";
  if (theta == -kInf) return "-inf";
  return fmt(theta);
}

}  // namespace

std::string curve_csv(const CurveResult& result) {
  std::ostringstream os;
  os << "mu,phi_hat,sigma_n,lcb,case,theta_hat,omega_hat,gamma_hat,score_residual\n";
  for (const auto& row : result.rows) {
    if (!row.ok) {
      os << fmt(row.mu) << ",nan,nan,nan,error:" << row.error << ",nan,nan,nan,nan\n";
      continue;
    }
    const auto& e = row.est;
    os << fmt(row.mu) << ',' << fmt(e.phi) << ',' << fmt(e.sigma_n) << ',' << fmt(e.lcb) << ','
       << case_name(e.alloc.tag) << ',' << fmt_theta(e.alloc.theta) << ',' << fmt(e.omega) << ','
       << fmt(e.gamma) << ',' << fmt(e.score_residual) << '\n';
  }
  return os.str();
}

AdaptiveResult adaptive_weights(BridgeContext& ctx, double mu, int resolution, bool b5_declared) {
  if (!b5_declared)
    fail(Err::B5NotDeclared,
         "adaptive convex-weight selection requires the constant-efficacy assumption");
  const auto& v0 = ctx.bounds.spec.vv[0];
  bool v0_zero = v0.is_constant() && v0.constant_value() == 0.0;
  if (!v0_zero) {
    v0_zero = true;
    for (double w : ctx.star.w)
      if (v0(w) != 0.0) v0_zero = false;
  }
  if (!v0_zero)
    fail(Err::B5NotDeclared, "adaptive convex-weight selection requires zero pseudo-trial weight");

  const std::size_t S = ctx.S;
  AdaptiveResult out;
  std::vector<double> uniform(S, 1.0 / static_cast<double>(S));
  if (S == 1) {
    out.weights = {1.0};
    set_convex_weights(ctx, out.weights);
    out.estimate = phi_estimate(ctx, mu);
    out.sigma2_selected = out.estimate.sigma_n * out.estimate.sigma_n;
    out.sigma2_uniform = out.sigma2_selected;
    return out;
  }

  auto objective = [&](const std::vector<double>& v) {
    set_convex_weights(ctx, v);
    BridgeEstimate est = phi_estimate(ctx, mu);
    return est.sigma_n * est.sigma_n;
  };

  // simplex grid of step 1/resolution, plus the uniform point; ties break
  // toward uniform because it is evaluated first and replacements must be
  // strictly better
  double best_sigma2 = objective(uniform);
  std::vector<double> best = uniform;
  out.sigma2_uniform = best_sigma2;

  std::vector<int> counts(S, 0);
  std::vector<double> cand(S, 0.0);
  const double step = 1.0 / static_cast<double>(resolution);
  std::function<void(std::size_t, int)> enumerate = [&](std::size_t pos, int left) {
    if (pos + 1 == S) {
      counts[pos] = left;
      for (std::size_t i = 0; i < S; ++i) cand[i] = counts[i] * step;
      if (cand == uniform) return;
      try {
        double s2 = objective(cand);
        if (s2 < best_sigma2) {
          best_sigma2 = s2;
          best = cand;
        }
      } catch (const Error&) {
        // infeasible candidate; keep the incumbent
      }
      return;
    }
    for (int k = 0; k <= left; ++k) {
      counts[pos] = k;
      enumerate(pos + 1, left - k);
    }
  };
  enumerate(0, resolution);

  out.weights = best;
  set_convex_weights(ctx, best);
  out.estimate = phi_estimate(ctx, mu);
  out.sigma2_selected = best_sigma2;
  return out;
}

// ---------------------------------------------------------------------------
// remainder diagnostics

double rem1_expectation_form(const RemainderInputs& in, double w) {
  double total = 0.0;
  for (std::size_t s = 0; s < in.S; ++s) {
    double m_fit = in.m_fit(s, 0, w), m_true = in.m_true(s, 0, w);
    double rho0 = (1.0 - in.g_true(s, w)) / (1.0 - in.g_fit(s, w));
    total += std::abs(m_fit - m_true + rho0 * (m_true - m_fit));
  }
  return total;
}

double rem1_product_form(const RemainderInputs& in, double w) {
  double total = 0.0;
  for (std::size_t s = 0; s < in.S; ++s) {
    double m_fit = in.m_fit(s, 0, w), m_true = in.m_true(s, 0, w);
    double rho0 = (1.0 - in.g_true(s, w)) / (1.0 - in.g_fit(s, w));
    total += std::abs((1.0 - rho0) * (m_fit - m_true));
  }
  return total;
}

double rem2_product_form(const RemainderInputs& in, double w) {
  double den_true = in.vv[0](w) * in.d0(w);
  double den_fit = den_true;
  double num_true = in.vv[0](w) * in.d1(w);
  double num_fit = num_true;
  for (std::size_t s = 0; s < in.S; ++s) {
    double vs = in.vv[s + 1](w);
    den_true += vs * in.m_true(s, 0, w);
    den_fit += vs * in.m_fit(s, 0, w);
    num_true += vs * in.m_true(s, 1, w);
    num_fit += vs * in.m_fit(s, 1, w);
  }
  double ve_true = 1.0 - num_true / den_true;
  double ve_fit = 1.0 - num_fit / den_fit;
  double term1 = (ve_fit - ve_true) * (1.0 - den_true / den_fit);
  double sum = 0.0;
  for (std::size_t s = 0; s < in.S; ++s) {
    double rho0 = (1.0 - in.g_true(s, w)) / (1.0 - in.g_fit(s, w));
    sum += in.vv[s + 1](w) * (1.0 - rho0) * (in.m_fit(s, 0, w) - in.m_true(s, 0, w));
  }
  return term1 - ve_fit * sum / den_true;
}

std::pair<double, double> remainder_l2(const RemainderInputs& in, const std::vector<double>& w_grid,
                                       const std::vector<double>& weights) {
  double tw = 0.0, acc1 = 0.0, acc2 = 0.0;
  for (std::size_t i = 0; i < w_grid.size(); ++i) {
    double wt = weights.empty() ? 1.0 : weights[i];
    double r1 = rem1_product_form(in, w_grid[i]);
    double r2 = rem2_product_form(in, w_grid[i]);
    acc1 += wt * r1 * r1;
    acc2 += wt * r2 * r2;
    tw += wt;
  }
  if (tw <= 0.0) return {0.0, 0.0};
  return {std::sqrt(acc1 / tw), std::sqrt(acc2 / tw)};
}

}  // namespace vebridge
