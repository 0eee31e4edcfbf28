#pragma once

#include <span>
#include <vector>

#include "samfed/agreement.hpp"
#include "samfed/image.hpp"
#include "samfed/prob_map.hpp"
#include "samfed/tensor.hpp"

namespace samfed {

// (1/HW) * sum_p weight(p) * -log softmax(logits)(p)[label(p)]
Var weighted_ce(Var logits, std::span<const std::uint8_t> labels, const Tensor& weights);
Var weighted_ce(Var logits, const PseudoLabelSet& pl);

struct BatchItem {
  Var logits;
  const PseudoLabelSet* pseudo = nullptr;
};

using BatchU = std::vector<BatchItem>;

// Mean of weighted_ce over the batch. Throws EmptyBatch.
Var batch_unsup_loss(const BatchU& batch);

// Mean per-pixel cross-entropy. Throws LabelOutOfRange.
Var supervised_ce(Var logits, const Mask& mask);

// Mean per-pixel KL(server || client); the server side is a constant.
Var kl_fusion_loss(Var client_logits, const ProbMap& server);
double kl_fusion_loss(const ProbMap& client, const ProbMap& server);

}  // namespace samfed
