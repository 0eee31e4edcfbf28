#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "samfed/tensor.hpp"

namespace samfed {

// Grayscale image, row-major, values in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), pixels(h * w, fill) {}

  float at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  float& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }

  // [H, W, 1] view for the network input.
  Tensor as_tensor() const { return Tensor({height, width, 1}, pixels); }
};

// Per-pixel class indices, row-major.
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;

  Mask() = default;
  Mask(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), labels(h * w, fill) {}

  std::uint8_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
  std::uint8_t& at(std::size_t y, std::size_t x) { return labels[y * width + x]; }
  std::size_t size() const noexcept { return labels.size(); }

  friend bool operator==(const Mask&, const Mask&) = default;
};

// Throws LabelOutOfRange when any label is >= num_classes.
void validate_mask(const Mask& mask, std::size_t num_classes);

}  // namespace samfed
