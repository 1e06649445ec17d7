#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "vebridge/data.hpp"
#include "vebridge/nuisance.hpp"

namespace vebridge {

//! Type-erased nuisance evaluators consumed by the estimator; fitted
//! objects or exact truths (population diagnostics) both plug in here.
struct TrialFuncs {
  std::function<double(int, double)> m;  // outcome regression m_s(a, w)
  std::function<double(double)> g;       // propensity P_s(A=1 | w)
  std::function<double(double)> r;       // density ratio dP_star/dP_s
};

struct NuisanceFuncs {
  std::vector<TrialFuncs> trials;
};

NuisanceFuncs as_funcs(const NuisanceSet& fits);

enum class CaseTag { Interior, MuTooBig, MuTooSmall };
const char* case_name(CaseTag tag);

inline constexpr double kInf = std::numeric_limits<double>::infinity();

//! Fitted efficacy-floor curve VE_minus^n, truncated below at the floor.
struct VeMinusCurve {
  std::function<double(double)> eval;
  double floor = -10.0;

  double operator()(double w) const { return eval(w); }
};

//! Evaluable unvaccinated-risk envelope (lambda, upsilon).
struct RiskEnvelope {
  std::function<double(double)> lambda;
  std::function<double(double)> upsilon;
  bool unit_range_warning = false;  // envelope exited [0,1] somewhere on the data
};

VeMinusCurve ve_minus(const NuisanceFuncs& nuis, const ValidatedBounds& bounds,
                      const MultiTrialData& data, const ClipConfig& clips);

RiskEnvelope risk_envelope(const NuisanceFuncs& nuis, const ValidatedBounds& bounds,
                           const MultiTrialData& data);

//! Result of the pooled logistic fluctuation of the control-arm outcome
//! regressions (single clever covariate, or two on the bivariate path).
struct FluctuationResult {
  FluctuationPath path = FluctuationPath::Univariate;
  double eps_u = 0.0;
  double eps_l = 0.0;      // bivariate path only
  bool converged = true;   // false: eps forced to 0, estimator is pure one-step
  double score_norm = 0.0;
  // observed ranges of the clever covariates; evaluation clamps into these
  // (flat extrapolation, like every other fitted object)
  double hu_lo = 0.0, hu_hi = 0.0;
  double hl_lo = 0.0, hl_hi = 0.0;
};

FluctuationResult fluctuate(const MultiTrialData& data, const NuisanceFuncs& nuis,
                            const ValidatedBounds& bounds,
                            const std::vector<std::vector<double>>& trial_weights);

//! Flattened per-observation tables shared by every downstream step: built
//! once per dataset, reused across the mu grid and across convex-weight
//! candidates. All regression values are post-fluctuation.
struct BridgeContext {
  std::size_t S = 0;
  std::size_t n_star = 0;
  std::vector<std::size_t> n_trial;  // full phase-1 counts
  double n_min = 0.0;
  double z = 1.64;
  double ve_floor = -10.0;
  double delta_min = 1e-6;

  struct StarBlock {
    std::vector<double> w, lam, ups, ve;
    std::vector<std::vector<double>> m0, m1;  // [s][i], s = 0..S-1 trials
    std::vector<double> d0, d1;               // pseudo-trial risks at w
    std::vector<std::vector<double>> vsv;     // [s][i] over sources 0..S
  };
  struct TrialBlock {
    std::vector<char> obs;  // biomarker observed (delta = 1)
    std::vector<double> w, wgt;
    std::vector<int> a, y;
    std::vector<double> r, g, m0own, m1own, ell, uu, vs, lam, ups, ve, vden;
    std::vector<double> d0, d1;
    std::vector<std::vector<double>> m0all, m1all;  // [s][record]
    std::vector<std::vector<double>> vsv;           // [source 0..S][record]
  };
  StarBlock star;
  std::vector<TrialBlock> trials;

  ValidatedBounds bounds;                            // current weights live in bounds.spec.vv
  std::function<double(std::size_t, double)> m0eps;  // fluctuated control regression
  std::function<double(std::size_t, double)> m1;
  FluctuationResult fluct;
  double score_beta1 = 0.0;  // pooled omega-score at beta == 1 after the update
  double score_beta0 = 0.0;  // and at beta == 0 (defined on the univariate path)
  bool envelope_warning = false;

  //! Efficacy floor curve under the current convex weights, floored.
  double ve_at(double w) const;
};

BridgeContext build_context(const MultiTrialData& data, const NuisanceFuncs& nuis,
                            const ValidatedBounds& bounds, const AnalysisConfig& cfg,
                            const std::vector<std::vector<double>>& trial_weights);

//! Swap in constant convex weights over the completed trials (pseudo-trial
//! weight zero) and refresh every weight-dependent table.
void set_convex_weights(BridgeContext& ctx, const std::vector<double>& v_trials);

//! One-step estimate of the beta-specific marginal unvaccinated risk:
//! target-sample mean of the allocated risk plus the trial-level
//! corrections. `beta` maps w to [0,1].
double omega_hat(const BridgeContext& ctx, const std::function<double(double)>& beta);

struct WorstCaseAllocation {
  double theta = 0.0;  // threshold on the fitted efficacy scale; +-inf at the boundary
  double eta = 0.0;
  CaseTag tag = CaseTag::Interior;
  double omega_beta0 = 0.0;  // one-step estimates at constant allocations
  double omega_beta1 = 0.0;

  double beta(double ve_value) const {
    if (ve_value < theta) return 1.0;
    if (ve_value == theta) return eta;
    return 0.0;
  }
};

//! Exact scan over the piecewise-constant corrected risk map: evaluates
//! every piece between sorted distinct breakpoints (the corrections carry
//! signed residuals, so the map need not be monotone) and returns the
//! supremum of the satisfying region, then interpolates the tie group.
WorstCaseAllocation solve_allocation(const BridgeContext& ctx, double mu);

struct BridgeEstimate {
  double mu = 0.0;
  double omega = 0.0;
  double gamma = 0.0;
  double phi = 0.0;
  WorstCaseAllocation alloc;
  std::vector<double> grad_star;
  std::vector<std::vector<double>> grad_trial;  // per trial, full length n_s
  std::vector<double> sigma2;                   // per source: star, then trials
  double sigma_n = 0.0;
  double lcb = 0.0;
  double score_residual = 0.0;
  double omega_gap = 0.0;  // |omega - mu|
  bool interior_gradient = true;
  bool phi_flag = false;        // phi > 1 or implied vaccinated risk exits [0,1]
  bool envelope_flag = false;   // lambda/upsilon exited [0,1] on the data
  bool fluctuation_diverged = false;
  // monotone-variant extras
  bool monotone = false;
  double theta_w = 0.0;  // threshold on the biomarker scale when monotone
};

//! Allocation-specific one-step estimate of gamma.
double gamma_hat(const BridgeContext& ctx, const WorstCaseAllocation& alloc);

//! Steps 5-10 plus gradients, variance and the lower confidence bound.
BridgeEstimate phi_estimate(const BridgeContext& ctx, double mu);

//! Estimate under a caller-supplied allocation. `interior_multiplier` is
//! the constant in the interior gradient formula (the threshold for the
//! standard parameter, the efficacy value at the threshold for the
//! monotone variant). Keys select how beta reads each observation:
//! fitted efficacy values, or (negated) biomarker values.
BridgeEstimate estimate_with_allocation(const BridgeContext& ctx, double mu,
                                        const WorstCaseAllocation& alloc,
                                        double interior_multiplier, bool key_on_w,
                                        bool key_negated);

//! phi(hat) - z * n_min^{-1/2} * sigma_n.
double lower_confidence_bound(double phi, double sigma_n, double n_min, double z);

struct MuFeasibleRange {
  double lo = 0.0, hi = 0.0;      // one-step omega at beta == 0 and beta == 1
  double lo_lcb = 0.0, hi_ucb = 0.0;  // one-sided confidence adjustments
};

MuFeasibleRange mu_feasible_range(const BridgeContext& ctx);

struct CurveRow {
  double mu = 0.0;
  bool ok = true;
  std::string error;  // error marker when !ok
  BridgeEstimate est;
};

struct CurveResult {
  std::vector<CurveRow> rows;
  double min_lcb = 0.0;  // pointwise minimum over the grid (uncertainty interval)
  bool any_ok = false;
};

//! One estimate row per grid value; rows are independent given the context
//! and may evaluate concurrently (threads <= 1 runs sequentially).
CurveResult curve(const BridgeContext& ctx, const std::vector<double>& mu_grid, int threads = 1);

std::string curve_csv(const CurveResult& result);

struct AdaptiveResult {
  std::vector<double> weights;  // per completed trial, sums to 1
  double sigma2_selected = 0.0;
  double sigma2_uniform = 0.0;
  BridgeEstimate estimate;  // at the selected weights
};

//! Constant convex-weight search minimizing the estimated variance, valid
//! under the declared constant-efficacy assumption. Mutates the context's
//! weights to the selected point.
AdaptiveResult adaptive_weights(BridgeContext& ctx, double mu, int resolution,
                                bool b5_declared);

// ---------------------------------------------------------------------------
// population (oracle) mode: exact evaluation on a finite discrete law

struct DiscreteInstance {
  std::vector<double> prob;
  std::vector<double> lam, ups, ve;
  std::vector<double> w;  // optional biomarker values (monotone variant, FD tests)
};

struct PopulationResult {
  double phi = 0.0, omega = 0.0, gamma = 0.0;
  double theta = 0.0, eta = 0.0;
  CaseTag tag = CaseTag::Interior;
  std::vector<double> grad;  // target gradient at each support point
};

PopulationResult population_phi(const DiscreteInstance& inst, double mu);
PopulationResult population_phi_monotone(const DiscreteInstance& inst, double mu, bool increasing);

// ---------------------------------------------------------------------------
// remainder diagnostics (simulation-only): both algebraic routes for Rem1,
// the product-form route for Rem2

struct RemainderInputs {
  std::size_t S = 0;
  std::function<double(std::size_t, int, double)> m_fit;   // s in 0..S-1
  std::function<double(std::size_t, int, double)> m_true;
  std::function<double(std::size_t, double)> g_fit;        // P(A=1|w)
  std::function<double(std::size_t, double)> g_true;
  std::vector<BoundFunc> vv;  // size S+1, pseudo-trial first
  BoundFunc d0, d1;
};

double rem1_expectation_form(const RemainderInputs& in, double w);
double rem1_product_form(const RemainderInputs& in, double w);
double rem2_product_form(const RemainderInputs& in, double w);

//! Target-marginal L2 norms of (Rem1, Rem2) over a weighted grid.
std::pair<double, double> remainder_l2(const RemainderInputs& in,
                                       const std::vector<double>& w_grid,
                                       const std::vector<double>& weights);

// shared threshold-scan machinery (also used by the monotone variant)
struct ScanOutcome {
  double theta = 0.0;
  double eta = 0.0;
  CaseTag tag = CaseTag::Interior;
  double value_beta0 = 0.0;  // map value at beta == 0 / beta == 1
  double value_beta1 = 0.0;
};

ScanOutcome threshold_scan(std::vector<std::pair<double, double>> key_jump, double base, double mu);

}  // namespace vebridge
