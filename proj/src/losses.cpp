#include "samfed/losses.hpp"

#include <algorithm>
#include <cmath>

#include "samfed/error.hpp"

namespace samfed {

namespace {

void require_spatial(const Tensor& logits, std::size_t h, std::size_t w, const char* op) {
  if (logits.rank() != 3 || logits.dim(0) != h || logits.dim(1) != w) {
    throw Error(Errc::ShapeMismatch, std::string(op) + ": logits " + shape_str(logits.shape()) + " vs target " +
                                         std::to_string(h) + "x" + std::to_string(w));
  }
}

}  // namespace

Var weighted_ce(Var logits, std::span<const std::uint8_t> labels, const Tensor& weights) {
  const Tensor& lv = logits.value();
  if (lv.rank() != 3 || weights.rank() != 2) {
    throw Error(Errc::ShapeMismatch, "weighted_ce: logits " + shape_str(lv.shape()) + ", weights " +
                                         shape_str(weights.shape()));
  }
  require_spatial(lv, weights.dim(0), weights.dim(1), "weighted_ce");
  Var picked = select_channel(log_softmax_channels(logits), labels);
  return mul_scalar(mean(mul_const(picked, weights)), -1.0f);
}

Var weighted_ce(Var logits, const PseudoLabelSet& pl) { return weighted_ce(logits, pl.labels.labels, pl.weights); }

Var batch_unsup_loss(const BatchU& batch) {
  if (batch.empty()) throw Error(Errc::EmptyBatch, "unsupervised batch is empty");
  const std::size_t h = batch.front().pseudo->height(), w = batch.front().pseudo->width();
  Var total;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    if (batch[k].pseudo->height() != h || batch[k].pseudo->width() != w) {
      throw Error(Errc::ShapeMismatch, "batch items differ in size");
    }
    Var l = weighted_ce(batch[k].logits, *batch[k].pseudo);
    total = k == 0 ? l : add(total, l);
  }
  return mul_scalar(total, 1.0f / static_cast<float>(batch.size()));
}

Var supervised_ce(Var logits, const Mask& mask) {
  const Tensor& lv = logits.value();
  require_spatial(lv, mask.height, mask.width, "supervised_ce");
  validate_mask(mask, lv.dim(2));
  return weighted_ce(logits, mask.labels, Tensor({mask.height, mask.width}, 1.0f));
}

Var kl_fusion_loss(Var client_logits, const ProbMap& server) {
  const Tensor& lv = client_logits.value();
  if (lv.shape() != server.probs.shape()) {
    throw Error(Errc::ShapeMismatch,
                "kl_fusion_loss: client " + shape_str(lv.shape()) + " vs server " + shape_str(server.probs.shape()));
  }
  const double pixels = static_cast<double>(server.pixels());
  // sum p log p is constant in the client parameters.
  double neg_entropy = 0.0;
  for (float p : server.probs.data())
    if (p > 0.0f) neg_entropy += static_cast<double>(p) * std::log(std::max(static_cast<double>(p), 1e-12));
  Var cross = sum(mul_const(log_softmax_channels(client_logits), server.probs));
  Var kl = mul_scalar(cross, static_cast<float>(-1.0 / pixels));
  return add_scalar(kl, static_cast<float>(neg_entropy / pixels));
}

double kl_fusion_loss(const ProbMap& client, const ProbMap& server) {
  if (client.probs.shape() != server.probs.shape()) {
    throw Error(Errc::ShapeMismatch, "kl_fusion_loss: client " + shape_str(client.probs.shape()) + " vs server " +
                                         shape_str(server.probs.shape()));
  }
  double total = 0.0;
  const auto c = client.probs.data();
  const auto s = server.probs.data();
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] <= 0.0f) continue;
    const double ps = s[i];
    const double pc = std::max(static_cast<double>(c[i]), 1e-12);
    total += ps * (std::log(std::max(ps, 1e-12)) - std::log(pc));
  }
  return total / static_cast<double>(server.pixels());
}

}  // namespace samfed
