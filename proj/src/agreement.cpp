#include "samfed/agreement.hpp"

#include <algorithm>
#include <string>

#include "samfed/error.hpp"
#include "samfed/pgm.hpp"

namespace samfed {

std::string_view to_string(PseudoLabelPolicy policy) noexcept {
  switch (policy) {
    case PseudoLabelPolicy::Agreement: return "agreement";
    case PseudoLabelPolicy::ClientOnly: return "client_only";
    case PseudoLabelPolicy::TeacherOnly: return "teacher_only";
  }
  return "agreement";
}

PseudoLabelPolicy parse_policy(std::string_view name) {
  if (name == "agreement") return PseudoLabelPolicy::Agreement;
  if (name == "client_only") return PseudoLabelPolicy::ClientOnly;
  if (name == "teacher_only") return PseudoLabelPolicy::TeacherOnly;
  throw Error(Errc::ConfigError, "unknown pseudo-label policy '" + std::string(name) + "'");
}

namespace {

struct Top {
  std::uint8_t label;
  float score;
};

Top top_of(const float* px, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < n; ++c)
    if (px[c] > px[best]) best = c;
  return {static_cast<std::uint8_t>(best), px[best]};
}

}  // namespace

PixelScores pixel_scores(const ProbMap& teacher, const ProbMap& client, std::size_t pixel) {
  return {top_of(teacher.pixel(pixel), teacher.classes()).score, top_of(client.pixel(pixel), client.classes()).score};
}

PseudoLabelSet fuse(const ProbMap& teacher, const ProbMap& client, PseudoLabelPolicy policy) {
  if (teacher.classes() != client.classes()) {
    throw Error(Errc::ClassCountMismatch, "teacher has " + std::to_string(teacher.classes()) + " classes, client " +
                                              std::to_string(client.classes()));
  }
  if (teacher.height() != client.height() || teacher.width() != client.width()) {
    throw Error(Errc::ShapeMismatch,
                "teacher " + shape_str(teacher.probs.shape()) + " vs client " + shape_str(client.probs.shape()));
  }
  const std::size_t n = teacher.classes();
  PseudoLabelSet out{Mask(teacher.height(), teacher.width()), Tensor({teacher.height(), teacher.width()}),
                     std::vector<std::uint8_t>(teacher.pixels(), 0)};
  for (std::size_t p = 0; p < teacher.pixels(); ++p) {
    const Top t = top_of(teacher.pixel(p), n);
    const Top c = top_of(client.pixel(p), n);
    const bool agree = t.label == c.label;
    out.agreement[p] = agree ? 1 : 0;
    Top chosen{};
    switch (policy) {
      case PseudoLabelPolicy::Agreement:
        if (agree) {
          chosen = {t.label, 1.0f};
        } else {
          chosen = t.score > c.score ? t : c;
        }
        break;
      case PseudoLabelPolicy::TeacherOnly: chosen = t; break;
      case PseudoLabelPolicy::ClientOnly: chosen = c; break;
    }
    out.labels.labels[p] = chosen.label;
    out.weights[p] = chosen.score;
  }
  return out;
}

double agreement_rate(const PseudoLabelSet& pl) noexcept {
  if (pl.agreement.empty()) return 0.0;
  std::size_t hits = 0;
  for (auto a : pl.agreement) hits += a != 0;
  return static_cast<double>(hits) / static_cast<double>(pl.agreement.size());
}

double mean_weight(const PseudoLabelSet& pl) noexcept {
  if (pl.weights.numel() == 0) return 0.0;
  double s = 0.0;
  for (float w : pl.weights.data()) s += w;
  return s / static_cast<double>(pl.weights.numel());
}

void export_agreement_image(const PseudoLabelSet& pl, const std::filesystem::path& path) {
  GrayImage8 img{pl.width(), pl.height(), std::vector<std::uint8_t>(pl.pixels())};
  std::transform(pl.agreement.begin(), pl.agreement.end(), img.pixels.begin(),
                 [](std::uint8_t a) { return a ? std::uint8_t{255} : std::uint8_t{0}; });
  write_pgm(path, img);
}

}  // namespace samfed
