#pragma once

#include <cstddef>

#include "samfed/image.hpp"
#include "samfed/tensor.hpp"

namespace samfed {

enum class Source { Teacher, Client };

// Per-pixel categorical distribution over N classes, laid out [H, W, N].
struct ProbMap {
  Tensor probs;
  Source source = Source::Client;

  std::size_t height() const { return probs.dim(0); }
  std::size_t width() const { return probs.dim(1); }
  std::size_t classes() const { return probs.dim(2); }
  std::size_t pixels() const { return height() * width(); }
  const float* pixel(std::size_t p) const { return probs.ptr() + p * classes(); }
};

// Numerically stable softmax over the channel axis of [H, W, N] logits.
// Throws NonFinite on NaN/Inf input and ShapeMismatch when N < 2.
ProbMap softmax_channels(const Tensor& logits, Source source = Source::Client);

// Max deviation of any per-pixel sum from 1, or +inf when a value is negative.
double max_distribution_error(const ProbMap& map);

// argmax over channels; ties go to the lowest class index.
Mask hard_labels(const ProbMap& map);

}  // namespace samfed
