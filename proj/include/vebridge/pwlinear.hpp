#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "vebridge/errors.hpp"

namespace vebridge {

//! A user-specified bound/weight function of the biomarker: either a
//! constant or a tabulated piecewise-linear curve (linear interpolation
//! between knots, flat extrapolation outside).
class BoundFunc {
 public:
  BoundFunc() : constant_(0.0) {}
  explicit BoundFunc(double c) : constant_(c) {}
  BoundFunc(std::vector<double> knots, std::vector<double> values)
      : knots_(std::move(knots)), values_(std::move(values)), constant_(0.0) {
    if (knots_.size() != values_.size() || knots_.empty())
      fail(Err::ConfigError, "piecewise-linear table needs matching non-empty x/y arrays");
    for (std::size_t i = 1; i < knots_.size(); ++i)
      if (!(knots_[i] > knots_[i - 1]))
        fail(Err::ConfigError, "piecewise-linear knots must be strictly increasing");
  }

  bool is_constant() const { return knots_.empty(); }
  double constant_value() const { return constant_; }
  const std::vector<double>& knots() const { return knots_; }
  const std::vector<double>& values() const { return values_; }

  double operator()(double w) const {
    if (knots_.empty()) return constant_;
    if (w <= knots_.front()) return values_.front();
    if (w >= knots_.back()) return values_.back();
    auto it = std::upper_bound(knots_.begin(), knots_.end(), w);
    std::size_t hi = static_cast<std::size_t>(it - knots_.begin());
    std::size_t lo = hi - 1;
    double t = (w - knots_[lo]) / (knots_[hi] - knots_[lo]);
    return values_[lo] + t * (values_[hi] - values_[lo]);
  }

  bool operator==(const BoundFunc& o) const {
    return constant_ == o.constant_ && knots_ == o.knots_ && values_ == o.values_;
  }

 private:
  std::vector<double> knots_;
  std::vector<double> values_;
  double constant_;
};

}  // namespace vebridge
