#pragma once

#include "vebridge/bridge.hpp"

namespace vebridge {

//! Allocation thresholded on the biomarker itself, valid when the user
//! declares the fitted efficacy curve monotone. `increasing` orients the
//! fill so low-efficacy strata are loaded first.
struct MonotoneAllocation {
  WorstCaseAllocation alloc;  // threshold lives on the key scale (w, or -w when decreasing)
  bool increasing = true;
  double theta_w = 0.0;  // threshold on the biomarker scale; +-inf at the boundary
};

MonotoneAllocation solve_allocation_monotone(const BridgeContext& ctx, double mu, bool increasing);

//! As phi_estimate, but interior-case gradients use the fitted efficacy
//! value at the biomarker threshold as the multiplier.
BridgeEstimate phi_estimate_monotone(const BridgeContext& ctx, double mu, bool increasing);

}  // namespace vebridge
