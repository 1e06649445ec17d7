#pragma once

#include <string>
#include <vector>

namespace vebridge {

//! Gaussian KDE fitted on a (possibly transformed) scale, tabulated on a
//! uniform grid and evaluated by linear interpolation.
struct Kde1d {
  double grid_lo = 0.0;
  double grid_hi = 1.0;
  double bandwidth = 1.0;
  bool bandwidth_fallback = false;  // plug-in degenerated to a range fraction
  std::vector<double> density;

  double operator()(double t) const;
};

//! Two-stage direct plug-in bandwidth (Gaussian kernel, binned pair sums).
//! Weighted samples use an effective sample size. Returns the normal-scale
//! bandwidth when a stage functional has the wrong sign.
double plugin_bandwidth(const std::vector<double>& x, const std::vector<double>& weight,
                        bool* fallback = nullptr);

double normal_scale_bandwidth(const std::vector<double>& x, const std::vector<double>& weight);

Kde1d fit_kde(const std::vector<double>& x, const std::vector<double>& weight,
              const std::string& bandwidth_rule, double grid_lo, double grid_hi,
              int grid_points = 2048);

}  // namespace vebridge
