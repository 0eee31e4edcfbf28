#pragma once

#include <cstdint>
#include <vector>

#include "samfed/image.hpp"

namespace samfed {

struct MetricResult {
  double dice = 0.0;
  double hd95 = 0.0;  // pixels
};

// 2|P∩G| / (|P|+|G|) over pixels labelled `cls`; 1.0 when both are empty.
double dice(const Mask& pred, const Mask& gt, std::uint8_t cls = 1);

// Pixels of `cls` that touch a non-`cls` pixel (4-neighbourhood) or the
// image border.
std::vector<std::uint8_t> boundary(const Mask& mask, std::uint8_t cls);

// Nearest-rank 95th percentile of the pooled directed boundary-to-boundary
// Euclidean distances in both directions. 0 when both sets are empty, the
// image diagonal when exactly one is.
double hd95(const Mask& pred, const Mask& gt, std::uint8_t cls = 1);

// Mean of dice / hd95 over the foreground classes 1..num_classes-1.
MetricResult evaluate(const Mask& pred, const Mask& gt, std::size_t num_classes);

}  // namespace samfed
