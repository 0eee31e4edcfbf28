#include "samfed/prob_map.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "samfed/error.hpp"

namespace samfed {

void validate_mask(const Mask& mask, std::size_t num_classes) {
  for (auto l : mask.labels) {
    if (l >= num_classes) {
      throw Error(Errc::LabelOutOfRange,
                  "mask label " + std::to_string(l) + " with " + std::to_string(num_classes) + " classes");
    }
  }
}

ProbMap softmax_channels(const Tensor& logits, Source source) {
  if (logits.rank() != 3 || logits.dim(2) < 2) {
    throw Error(Errc::ShapeMismatch, "softmax_channels expects [H,W,N>=2], got " + shape_str(logits.shape()));
  }
  if (!logits.all_finite()) throw Error(Errc::NonFinite, "softmax_channels: logits contain NaN/Inf");
  const std::size_t n = logits.dim(2);
  Tensor out(logits.shape());
  for (std::size_t base = 0; base < logits.numel(); base += n) {
    float m = logits[base];
    for (std::size_t c = 1; c < n; ++c) m = std::max(m, logits[base + c]);
    float s = 0.0f;
    for (std::size_t c = 0; c < n; ++c) s += (out[base + c] = std::exp(logits[base + c] - m));
    for (std::size_t c = 0; c < n; ++c) out[base + c] /= s;
  }
  return ProbMap{std::move(out), source};
}

double max_distribution_error(const ProbMap& map) {
  const std::size_t n = map.classes();
  double worst = 0.0;
  for (std::size_t p = 0; p < map.pixels(); ++p) {
    const float* px = map.pixel(p);
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      if (!(px[c] >= 0.0f)) return std::numeric_limits<double>::infinity();
      s += px[c];
    }
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

Mask hard_labels(const ProbMap& map) {
  const std::size_t n = map.classes();
  Mask out(map.height(), map.width());
  for (std::size_t p = 0; p < map.pixels(); ++p) {
    const float* px = map.pixel(p);
    std::size_t best = 0;
    for (std::size_t c = 1; c < n; ++c)
      if (px[c] > px[best]) best = c;
    out.labels[p] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace samfed
