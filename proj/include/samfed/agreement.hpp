#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "samfed/image.hpp"
#include "samfed/prob_map.hpp"
#include "samfed/tensor.hpp"

namespace samfed {

// Hard pseudo-labels with per-pixel confidence weights for one image.
struct PseudoLabelSet {
  Mask labels;
  Tensor weights;                       // [H, W], each in [1/N, 1]
  std::vector<std::uint8_t> agreement;  // 1 where teacher and client argmax coincide

  std::size_t height() const noexcept { return labels.height; }
  std::size_t width() const noexcept { return labels.width; }
  std::size_t pixels() const noexcept { return labels.size(); }
};

// Max class probability of each model at one pixel.
struct PixelScores {
  float teacher = 0.0f;
  float client = 0.0f;
};

// Agreement is the teacher/client mechanism; the other two are ablations
// that keep only one model's argmax and max-probability.
enum class PseudoLabelPolicy { Agreement, ClientOnly, TeacherOnly };

std::string_view to_string(PseudoLabelPolicy policy) noexcept;
PseudoLabelPolicy parse_policy(std::string_view name);

PixelScores pixel_scores(const ProbMap& teacher, const ProbMap& client, std::size_t pixel);

// Per pixel: consensus label with weight 1 when the argmaxes agree, else the
// label of the strictly more confident teacher (weight s_T) or, otherwise,
// the client (weight s_c). The agreement field is filled for every policy.
PseudoLabelSet fuse(const ProbMap& teacher, const ProbMap& client,
                    PseudoLabelPolicy policy = PseudoLabelPolicy::Agreement);

double agreement_rate(const PseudoLabelSet& pl) noexcept;
double mean_weight(const PseudoLabelSet& pl) noexcept;

// Binary P5: 255 where the models agree, 0 elsewhere.
void export_agreement_image(const PseudoLabelSet& pl, const std::filesystem::path& path);

}  // namespace samfed
