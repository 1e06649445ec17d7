#include "vebridge/simgen.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "vebridge/bridge.hpp"
#include "vebridge/errors.hpp"
#include "vebridge/learners.hpp"
#include "vebridge/twophase.hpp"

namespace vebridge {

const char* preset_name(Preset p) {
  switch (p) {
    case Preset::Loosest: return "loosest";
    case Preset::Moderate: return "moderate";
    case Preset::Tight: return "tight";
  }
  return "?";
}

const char* size_name(SizeSetting s) { return s == SizeSetting::Smaller ? "smaller" : "larger"; }

Preset preset_from_string(const std::string& s) {
  if (s == "loosest") return Preset::Loosest;
  if (s == "moderate") return Preset::Moderate;
  if (s == "tight") return Preset::Tight;
  fail(Err::ConfigError, "unknown preset '" + s + "'");
}

SizeSetting size_from_string(const std::string& s) {
  if (s == "smaller") return SizeSetting::Smaller;
  if (s == "larger") return SizeSetting::Larger;
  fail(Err::ConfigError, "unknown size setting '" + s + "'");
}

SampleSizes sizes_for(SizeSetting s) {
  return s == SizeSetting::Smaller ? SampleSizes{100, 2000, 2000} : SampleSizes{200, 4000, 4000};
}

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Fixed: return "fixed";
    case Variant::Adaptive: return "adaptive";
    case Variant::TwoPhaseKnown: return "two_phase_known";
    case Variant::TwoPhaseEstimated: return "two_phase_estimated";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  if (s == "fixed") return Variant::Fixed;
  if (s == "adaptive") return Variant::Adaptive;
  if (s == "two_phase_known") return Variant::TwoPhaseKnown;
  if (s == "two_phase_estimated") return Variant::TwoPhaseEstimated;
  fail(Err::ConfigError, "unknown variant '" + s + "'");
}

// ---------------------------------------------------------------------------
// data-generating process

double dgp_ve(double w) {
  double pos = w > 0.2 ? w - 0.2 : 0.0;
  return 1.0 - expit(-1.0 - w - 3.0 * (0.3 + pos)) / expit(-1.0 - w);
}

double dgp_control_risk(int trial, double w) {
  return trial == 1 ? expit(-1.0 - w) : expit(-1.0);
}

double dgp_w(int population, double z) {
  switch (population) {
    case 1: return expit(z - 2.0);
    case 2: return expit(5.0 * (z - 1.0));
    default: return expit(2.0 * (z - 0.5));
  }
}

std::vector<double> generate_star(std::size_t n, Rng& rng) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = dgp_w(0, rng.normal());
  return w;
}

TrialSample generate_trial(int population, std::size_t n, Rng& rng, bool with_aux) {
  TrialSample t;
  t.id = std::to_string(population);
  t.records.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ObservationRecord rec;
    double w = dgp_w(population, rng.normal());
    rec.w = w;
    rec.a = rng.bernoulli(0.5);
    double risk = dgp_control_risk(population, w);
    if (rec.a == 1) risk *= 1.0 - dgp_ve(w);
    rec.y = rng.bernoulli(risk);
    if (with_aux) rec.l = expit(logit(w) + rng.normal());
    t.records.push_back(rec);
  }
  return t;
}

MultiTrialData generate_dataset(const SampleSizes& sz, Rng& rng, bool with_aux) {
  MultiTrialData data;
  data.star_w = generate_star(sz.n_star, rng);
  data.trials.push_back(generate_trial(1, sz.n1, rng, with_aux));
  data.trials.push_back(generate_trial(2, sz.n2, rng, with_aux));
  return data;
}

BoundsSpec preset_bounds(Preset p) {
  BoundsSpec spec;
  spec.delta_min = 1e-6;
  spec.d0 = BoundFunc(0.0);
  spec.d1 = BoundFunc(0.0);
  spec.vv = {BoundFunc(0.0), BoundFunc(0.5), BoundFunc(0.5)};
  switch (p) {
    case Preset::Loosest:
      spec.ell = {BoundFunc(0.0), BoundFunc(0.0), BoundFunc(0.0)};
      spec.uu = {BoundFunc(1.0), BoundFunc(0.0), BoundFunc(0.0)};
      break;
    case Preset::Moderate:
      spec.ell = {BoundFunc(0.0), BoundFunc(0.25), BoundFunc(0.25)};
      spec.uu = {BoundFunc(0.0), BoundFunc(0.75), BoundFunc(0.75)};
      break;
    case Preset::Tight:
      spec.ell = {BoundFunc(0.0), BoundFunc(0.4), BoundFunc(0.4)};
      spec.uu = {BoundFunc(0.0), BoundFunc(0.6), BoundFunc(0.6)};
      break;
  }
  return spec;
}

AnalysisConfig preset_config(Preset p, std::uint64_t seed) {
  AnalysisConfig cfg;
  cfg.bounds = preset_bounds(p);
  cfg.seed = seed;
  cfg.assume_constant_ve = true;  // the study design posits a shared efficacy curve
  return cfg;
}

// ---------------------------------------------------------------------------
// exact functionals by adaptive quadrature over the target biomarker law

namespace {

constexpr double kZLo = -8.5, kZHi = 8.5;
// the efficacy curve has a kink where the positive part activates
const double kZKink = logit(0.2) / 2.0 + 0.5;

double norm_pdf(double z) { return std::exp(-0.5 * z * z) / 2.5066282746310005024; }

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double fa,
                        double fm, double fb, double whole, double tol, int depth) {
  double m = 0.5 * (a + b);
  double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  double flm = f(lm), frm = f(rm);
  double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) < 15.0 * tol)
    return left + right + (left + right - whole) / 15.0;
  return adaptive_simpson(f, a, m, fa, flm, fm, left, tol * 0.5, depth - 1) +
         adaptive_simpson(f, m, b, fm, frm, fb, right, tol * 0.5, depth - 1);
}

double integrate(const std::function<double(double)>& f, double a, double b, double tol = 1e-11) {
  if (!(b > a)) return 0.0;
  double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return adaptive_simpson(f, a, b, fa, fm, fb, whole, tol, 48);
}

//! Integral of h(w(z)) * phi(z) over the target law, split at the kink.
double target_integral(const std::function<double(double)>& h, double z_hi = kZHi,
                       double z_lo = kZLo) {
  auto f = [&](double z) { return h(dgp_w(0, z)) * norm_pdf(z); };
  double total = 0.0;
  if (z_lo < kZKink && kZKink < z_hi) {
    total += integrate(f, z_lo, kZKink);
    total += integrate(f, kZKink, z_hi);
  } else {
    total += integrate(f, z_lo, z_hi);
  }
  return total;
}

struct EnvelopeFns {
  std::function<double(double)> lam, ups;
};

EnvelopeFns preset_envelope(Preset p) {
  auto sum_risks = [](double w) { return dgp_control_risk(1, w) + dgp_control_risk(2, w); };
  switch (p) {
    case Preset::Loosest:
      return {[](double) { return 0.0; }, [](double) { return 1.0; }};
    case Preset::Moderate:
      return {[=](double w) { return 0.25 * sum_risks(w); },
              [=](double w) { return 0.75 * sum_risks(w); }};
    case Preset::Tight:
    default:
      return {[=](double w) { return 0.4 * sum_risks(w); },
              [=](double w) { return 0.6 * sum_risks(w); }};
  }
}

}  // namespace

double true_e_lambda(Preset p) {
  auto env = preset_envelope(p);
  return target_integral(env.lam);
}

double true_e_upsilon(Preset p) {
  auto env = preset_envelope(p);
  return target_integral(env.ups);
}

double true_mu(Preset p) {
  auto env = preset_envelope(p);
  return target_integral([&](double w) { return 0.5 * (env.lam(w) + env.ups(w)); });
}

double true_target_marginal_ve(Preset p) {
  // target law: unvaccinated risk at the envelope midpoint, efficacy curve
  // shared with the completed trials
  auto env = preset_envelope(p);
  double num = target_integral([&](double w) { return 0.5 * (env.lam(w) + env.ups(w)) * dgp_ve(w); });
  return num / true_mu(p);
}

double true_phi_oracle(Preset p, double mu) {
  auto env = preset_envelope(p);
  double e_lam = target_integral(env.lam);
  double e_ups = target_integral(env.ups);
  auto gap = [&](double w) { return env.ups(w) - env.lam(w); };

  if (mu >= e_ups) {
    double num = target_integral([&](double w) { return env.ups(w) * dgp_ve(w); });
    return num / e_ups;
  }
  if (mu <= e_lam) {
    if (!(e_lam > 0.0)) fail(Err::InfeasibleMu, "mu not reachable under this preset");
    double num = target_integral([&](double w) { return env.lam(w) * dgp_ve(w); });
    return num / e_lam;
  }
  // the efficacy curve of this process increases in w, so the worst case
  // fills from the left; locate the z threshold by bisection
  auto filled = [&](double zc) { return e_lam + target_integral(gap, zc); };
  double lo = kZLo, hi = kZHi;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    if (filled(mid) <= mu)
      lo = mid;
    else
      hi = mid;
    if (hi - lo < 1e-13) break;
  }
  double zc = 0.5 * (lo + hi);
  double gamma = target_integral([&](double w) { return env.lam(w) * dgp_ve(w); }) +
                 target_integral([&](double w) { return gap(w) * dgp_ve(w); }, zc);
  double omega = filled(zc);
  return gamma / omega;
}

double true_phi_oracle_mc(Preset p, double mu, std::size_t draws, std::uint64_t seed) {
  auto env = preset_envelope(p);
  Rng rng(seed);
  DiscreteInstance inst;
  inst.prob.assign(draws, 1.0);
  inst.lam.resize(draws);
  inst.ups.resize(draws);
  inst.ve.resize(draws);
  for (std::size_t i = 0; i < draws; ++i) {
    double w = dgp_w(0, rng.normal());
    inst.lam[i] = env.lam(w);
    inst.ups[i] = env.ups(w);
    inst.ve[i] = dgp_ve(w);
  }
  return population_phi(inst, mu).phi;
}

// ---------------------------------------------------------------------------
// Monte Carlo experiment runner

namespace {

ReplicationRecord run_replication(const DgpSpec& spec, const std::vector<double>& mu_grid,
                                  int rep) {
  ReplicationRecord rec;
  try {
    std::uint64_t rep_seed = derive_seed(spec.seed, rngstream::kReplication, rep);
    Rng rng(rep_seed);
    bool two_phase =
        spec.variant == Variant::TwoPhaseKnown || spec.variant == Variant::TwoPhaseEstimated;
    MultiTrialData data = generate_dataset(sizes_for(spec.size), rng, two_phase);

    AnalysisConfig cfg = preset_config(spec.preset, rep_seed);
    if (spec.variant == Variant::TwoPhaseKnown) cfg.censoring.mode = CensoringMode::KnownNcc;

    if (!two_phase) {
      FittedPipeline pipe = fit_pipeline(data, cfg, false);
      for (double mu : mu_grid) {
        if (spec.variant == Variant::Adaptive) {
          set_convex_weights(pipe.ctx, {0.5, 0.5});
          BridgeEstimate uni = phi_estimate(pipe.ctx, mu);
          AdaptiveResult ad = adaptive_weights(pipe.ctx, mu, cfg.adaptive_resolution, true);
          rec.phi.push_back(ad.estimate.phi);
          rec.lcb.push_back(ad.estimate.lcb);
          rec.sigma_n.push_back(ad.estimate.sigma_n);
          rec.sigma2_adaptive.push_back(ad.sigma2_selected);
          rec.sigma2_uniform.push_back(uni.sigma_n * uni.sigma_n);
          rec.lcb_uniform.push_back(uni.lcb);
        } else {
          BridgeEstimate est = phi_estimate(pipe.ctx, mu);
          rec.phi.push_back(est.phi);
          rec.lcb.push_back(est.lcb);
          rec.sigma_n.push_back(est.sigma_n);
        }
      }
      rec.ok = true;
      return rec;
    }

    // two-phase variants: run the full-data companion first (variance
    // ratio), then subsample the biomarker and run the weighted pipeline
    FittedPipeline full = fit_pipeline(data, cfg, false);
    for (double mu : mu_grid) rec.phi_full.push_back(phi_estimate(full.ctx, mu).phi);

    MultiTrialData ncc = data;
    ncc.two_phase = true;
    for (std::size_t s = 0; s < ncc.trials.size(); ++s) {
      Rng ncc_rng(derive_seed(rep_seed, rngstream::kNcc, s));
      ncc.trials[s] = nested_case_control_sample(data.trials[s], spec.ncc_ratio, ncc_rng);
    }
    FittedPipeline pipe = fit_pipeline(ncc, cfg, true);
    for (double mu : mu_grid) {
      BridgeEstimate est = phi_estimate(pipe.ctx, mu);
      rec.phi.push_back(est.phi);
      rec.lcb.push_back(est.lcb);
      rec.sigma_n.push_back(est.sigma_n);
    }
    rec.ok = true;
  } catch (const std::exception& e) {
    rec.ok = false;
    rec.error = e.what();
  }
  return rec;
}

double variance_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double acc = 0.0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return acc / static_cast<double>(v.size() - 1);
}

}  // namespace

ExperimentReport run_experiment(const DgpSpec& spec) {
  ExperimentReport report;
  report.spec = spec;
  report.mu_grid = spec.mu_grid.empty() ? std::vector<double>{true_mu(spec.preset)} : spec.mu_grid;
  if (spec.replications <= 0) {
    report.error_flag = true;
    return report;
  }

  report.reps.resize(spec.replications);
  // replications are independent with per-replication derived seeds; the
  // reduction below only reads per-slot results, so thread count and
  // execution order cannot change the report
  int threads = std::max(1, spec.threads);
  if (threads == 1) {
    for (int r = 0; r < spec.replications; ++r)
      report.reps[r] = run_replication(spec, report.mu_grid, r);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&]() {
        for (;;) {
          int r = next.fetch_add(1);
          if (r >= spec.replications) return;
          report.reps[r] = run_replication(spec, report.mu_grid, r);
        }
      });
    }
    for (auto& th : pool) th.join();
  }

  bool two_phase =
      spec.variant == Variant::TwoPhaseKnown || spec.variant == Variant::TwoPhaseEstimated;
  for (std::size_t k = 0; k < report.mu_grid.size(); ++k) {
    ExperimentRow row;
    row.setting = size_name(spec.size);
    row.preset = preset_name(spec.preset);
    row.variant = variant_name(spec.variant);
    row.mu = report.mu_grid[k];
    row.true_phi = true_phi_oracle(spec.preset, row.mu);

    std::vector<double> phis, lcbs, fulls;
    int covered = 0, failures = 0, ok = 0;
    for (const auto& rep : report.reps) {
      if (!rep.ok) {
        ++failures;
        continue;
      }
      ++ok;
      phis.push_back(rep.phi[k]);
      lcbs.push_back(rep.lcb[k]);
      if (rep.lcb[k] <= row.true_phi) ++covered;
      if (two_phase) fulls.push_back(rep.phi_full[k]);
    }
    row.failures = failures;
    if (ok > 0) {
      row.coverage = static_cast<double>(covered) / ok;
      for (double v : phis) row.avg_phi += v;
      row.avg_phi /= ok;
      for (double v : lcbs) row.avg_lcb += v;
      row.avg_lcb /= ok;
      row.mc_se = ok > 1 ? std::sqrt(variance_of(phis) / ok) : 0.0;
      if (two_phase) {
        double vf = variance_of(fulls);
        row.var_ratio = vf > 0.0 ? variance_of(phis) / vf : 0.0;
      }
    } else {
      report.error_flag = true;
    }
    report.rows.push_back(row);
  }
  return report;
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string experiment_csv(const ExperimentReport& report) {
  std::ostringstream os;
  os << "setting,preset,variant,mu,coverage,avg_phi,avg_lcb,true_phi,mc_se,failures\n";
  for (const auto& r : report.rows) {
    os << r.setting << ',' << r.preset << ',' << r.variant << ',' << fmt(r.mu) << ','
       << fmt(r.coverage) << ',' << fmt(r.avg_phi) << ',' << fmt(r.avg_lcb) << ','
       << fmt(r.true_phi) << ',' << fmt(r.mc_se) << ',' << r.failures << '\n';
  }
  return os.str();
}

std::string experiment_json(const ExperimentReport& report) {
  nlohmann::ordered_json j;
  j["setting"] = size_name(report.spec.size);
  j["preset"] = preset_name(report.spec.preset);
  j["variant"] = variant_name(report.spec.variant);
  j["replications"] = report.spec.replications;
  j["seed"] = report.spec.seed;
  j["error_flag"] = report.error_flag;
  j["rows"] = nlohmann::ordered_json::array();
  for (const auto& r : report.rows) {
    nlohmann::ordered_json row;
    row["mu"] = r.mu;
    row["coverage"] = r.coverage;
    row["avg_phi"] = r.avg_phi;
    row["avg_lcb"] = r.avg_lcb;
    row["true_phi"] = r.true_phi;
    row["mc_se"] = r.mc_se;
    row["failures"] = r.failures;
    bool two_phase = report.spec.variant == Variant::TwoPhaseKnown ||
                     report.spec.variant == Variant::TwoPhaseEstimated;
    if (two_phase) row["var_ratio"] = r.var_ratio;
    j["rows"].push_back(row);
  }
  return j.dump(2);
}

}  // namespace vebridge
