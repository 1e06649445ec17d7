#include "vebridge/kde.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vebridge/errors.hpp"

namespace vebridge {

namespace {

constexpr double kSqrt2Pi = 2.5066282746310005024;
constexpr int kBinCount = 401;

double phi(double x) { return std::exp(-0.5 * x * x) / kSqrt2Pi; }
// even-order Gaussian derivatives used by the plug-in stages
double phi4(double x) {
  double x2 = x * x;
  return (x2 * x2 - 6.0 * x2 + 3.0) * phi(x);
}
double phi6(double x) {
  double x2 = x * x;
  return ((x2 - 15.0) * x2 * x2 + 45.0 * x2 - 15.0) * phi(x);
}

struct WeightedSample {
  const std::vector<double>& x;
  const std::vector<double>& w;  // may be empty

  double weight(std::size_t i) const { return w.empty() ? 1.0 : w[i]; }
  double total_weight() const {
    if (w.empty()) return static_cast<double>(x.size());
    return std::accumulate(w.begin(), w.end(), 0.0);
  }
  double effective_n() const {
    if (w.empty()) return static_cast<double>(x.size());
    double s = 0.0, s2 = 0.0;
    for (double v : w) {
      s += v;
      s2 += v * v;
    }
    return s2 > 0.0 ? s * s / s2 : 0.0;
  }
};

double weighted_sd(const WeightedSample& s) {
  double tw = s.total_weight();
  if (tw <= 0.0) return 0.0;
  double mean = 0.0;
  for (std::size_t i = 0; i < s.x.size(); ++i) mean += s.weight(i) * s.x[i];
  mean /= tw;
  double var = 0.0;
  for (std::size_t i = 0; i < s.x.size(); ++i) {
    double d = s.x[i] - mean;
    var += s.weight(i) * d * d;
  }
  return std::sqrt(var / tw);
}

double weighted_quantile(const WeightedSample& s, double q) {
  std::vector<std::size_t> idx(s.x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s.x[a] < s.x[b]; });
  double tw = s.total_weight(), cum = 0.0, target = q * tw;
  for (std::size_t i : idx) {
    cum += s.weight(i);
    if (cum >= target) return s.x[i];
  }
  return s.x[idx.back()];
}

//! Linear binning of the weighted sample onto an equally spaced grid.
std::vector<double> linear_bin(const WeightedSample& s, double lo, double hi, int bins) {
  std::vector<double> counts(bins, 0.0);
  double span = hi - lo;
  if (span <= 0.0) {
    counts[0] = s.total_weight();
    return counts;
  }
  double scale = (bins - 1) / span;
  for (std::size_t i = 0; i < s.x.size(); ++i) {
    double pos = (std::clamp(s.x[i], lo, hi) - lo) * scale;
    int k = static_cast<int>(pos);
    if (k >= bins - 1) {
      counts[bins - 1] += s.weight(i);
    } else {
      double frac = pos - k;
      counts[k] += s.weight(i) * (1.0 - frac);
      counts[k + 1] += s.weight(i) * frac;
    }
  }
  return counts;
}

//! psi_r(g) = sum_{ij} w_i w_j phi_g^{(r)}(x_i - x_j) / (sum w)^2, via binned
//! pair counts.
double psi_functional(const std::vector<double>& counts, double bin_width, double tw, double g,
                      int order) {
  const int m = static_cast<int>(counts.size());
  double total = 0.0;
  for (int d = 0; d < m; ++d) {
    double kappa = 0.0;
    for (int j = 0; j + d < m; ++j) kappa += counts[j] * counts[j + d];
    if (d > 0) kappa *= 2.0;
    double u = d * bin_width / g;
    double kern = order == 4 ? phi4(u) : phi6(u);
    total += kappa * kern;
    if (d * bin_width > 12.0 * g && d > 0) break;  // Gaussian tail negligible
  }
  double gpow = std::pow(g, order + 1);
  return total / (tw * tw * gpow);
}

}  // namespace

double normal_scale_bandwidth(const std::vector<double>& x, const std::vector<double>& weight) {
  WeightedSample s{x, weight};
  double sd = weighted_sd(s);
  double iqr = weighted_quantile(s, 0.75) - weighted_quantile(s, 0.25);
  double sigma = sd;
  if (iqr > 0.0) sigma = std::min(sd, iqr / 1.349);
  double n = std::max(1.0, s.effective_n());
  if (sigma <= 0.0) return 0.0;
  return 1.06 * sigma * std::pow(n, -0.2);
}

double plugin_bandwidth(const std::vector<double>& x, const std::vector<double>& weight,
                        bool* fallback) {
  if (fallback) *fallback = false;
  WeightedSample s{x, weight};
  double sd = weighted_sd(s);
  double iqr = weighted_quantile(s, 0.75) - weighted_quantile(s, 0.25);
  double sigma = sd;
  if (iqr > 0.0) sigma = std::min(sd, iqr / 1.349);
  double lo = *std::min_element(x.begin(), x.end());
  double hi = *std::max_element(x.begin(), x.end());
  if (!(sigma > 0.0)) {
    // degenerate sample: fixed fraction of the range (or a floor)
    if (fallback) *fallback = true;
    double range = hi - lo;
    return range > 0.0 ? 1e-3 * range : 1e-6;
  }
  double n = std::max(2.0, s.effective_n());
  double tw = s.total_weight();

  // stage 0: normal-scale psi_8 = 105 / (32 sqrt(pi) sigma^9)
  double psi8 = 105.0 / (32.0 * std::sqrt(M_PI) * std::pow(sigma, 9));
  // stage 1: psi_6 with g6 = [-2 phi6(0) / (psi8 n)]^(1/9); phi6(0) = -15/sqrt(2 pi)
  double g6 = std::pow(30.0 / (kSqrt2Pi * psi8 * n), 1.0 / 9.0);
  auto counts = linear_bin(s, lo, hi, kBinCount);
  double bin_width = counts.size() > 1 ? (hi - lo) / (kBinCount - 1) : 0.0;
  double psi6 = psi_functional(counts, bin_width, tw, g6, 6);
  if (!(psi6 < 0.0)) {
    if (fallback) *fallback = true;
    return normal_scale_bandwidth(x, weight);
  }
  // stage 2: psi_4 with g4 = [-2 phi4(0) / (psi6 n)]^(1/7); phi4(0) = 3/sqrt(2 pi)
  double g4 = std::pow(-6.0 / (kSqrt2Pi * psi6 * n), 1.0 / 7.0);
  double psi4 = psi_functional(counts, bin_width, tw, g4, 4);
  if (!(psi4 > 0.0)) {
    if (fallback) *fallback = true;
    return normal_scale_bandwidth(x, weight);
  }
  // h = [ R(K) / (mu2^2 psi4 n) ]^(1/5), R(K) = 1/(2 sqrt(pi))
  return std::pow(1.0 / (2.0 * std::sqrt(M_PI) * psi4 * n), 0.2);
}

double Kde1d::operator()(double t) const {
  if (density.empty()) return 0.0;
  if (density.size() == 1) return density[0];
  double clamped = std::clamp(t, grid_lo, grid_hi);
  double pos = (clamped - grid_lo) / (grid_hi - grid_lo) * (density.size() - 1);
  std::size_t k = std::min(static_cast<std::size_t>(pos), density.size() - 2);
  double frac = pos - static_cast<double>(k);
  return density[k] + frac * (density[k + 1] - density[k]);
}

Kde1d fit_kde(const std::vector<double>& x, const std::vector<double>& weight,
              const std::string& bandwidth_rule, double grid_lo, double grid_hi,
              int grid_points) {
  if (x.empty()) fail(Err::EmptySample, "density fit on empty sample");
  Kde1d kde;
  bool fb = false;
  if (bandwidth_rule == "plugin") {
    kde.bandwidth = plugin_bandwidth(x, weight, &fb);
  } else if (bandwidth_rule == "normal") {
    kde.bandwidth = normal_scale_bandwidth(x, weight);
    if (!(kde.bandwidth > 0.0)) {
      fb = true;
      double range = *std::max_element(x.begin(), x.end()) - *std::min_element(x.begin(), x.end());
      kde.bandwidth = range > 0.0 ? 1e-3 * range : 1e-6;
    }
  } else {
    fail(Err::ConfigError, "unknown bandwidth rule '" + bandwidth_rule + "'");
  }
  kde.bandwidth_fallback = fb;
  kde.grid_lo = grid_lo;
  kde.grid_hi = grid_hi;
  kde.density.assign(grid_points, 0.0);
  WeightedSample s{x, weight};
  double tw = s.total_weight();
  double h = kde.bandwidth;
  double step = grid_points > 1 ? (grid_hi - grid_lo) / (grid_points - 1) : 0.0;
  if (step <= 0.0) {
    kde.density.assign(grid_points, 1.0 / h);
    return kde;
  }
  // linear binning on the evaluation grid, then discrete convolution with
  // the Gaussian kernel truncated at 8 bandwidths
  auto counts = linear_bin(s, grid_lo, grid_hi, grid_points);
  int reach = std::min(grid_points - 1, static_cast<int>(std::ceil(8.0 * h / step)));
  std::vector<double> kern(reach + 1);
  for (int d = 0; d <= reach; ++d) kern[d] = phi(d * step / h);
  for (int k = 0; k < grid_points; ++k) {
    double acc = counts[k] * kern[0];
    for (int d = 1; d <= reach; ++d) {
      double add = 0.0;
      if (k - d >= 0) add += counts[k - d];
      if (k + d < grid_points) add += counts[k + d];
      acc += add * kern[d];
    }
    kde.density[k] = acc / (tw * h);
  }
  return kde;
}

}  // namespace vebridge
