#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "samfed/data.hpp"
#include "samfed/prob_map.hpp"
#include "samfed/rng.hpp"
#include "samfed/tensor.hpp"

namespace samfed {

struct SegNetConfig {
  std::size_t base_channels = 4;
  std::size_t depth = 2;
  std::size_t num_classes = 2;
  std::size_t height = 64;
  std::size_t width = 64;

  void validate() const;
  std::uint64_t fingerprint() const noexcept;

  friend bool operator==(const SegNetConfig&, const SegNetConfig&) = default;
};

struct ParamEntry {
  std::string name;
  Tensor tensor;
};

struct ModelParams {
  std::vector<ParamEntry> entries;
  std::uint64_t fingerprint = 0;

  const Tensor& at(std::string_view name) const;
  std::optional<std::size_t> index_of(std::string_view name) const;
  std::size_t parameter_count() const noexcept;
};

bool bitwise_equal(const ModelParams& a, const ModelParams& b) noexcept;

struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t fan_in = 0;
  bool is_bias = false;
};

// U-Net style encoder/decoder: two conv3x3+relu per stage, 2x average-pool
// down, nearest-neighbour up, skip connections by channel concatenation and
// a 1x1 head. Stage s has base_channels * 2^s channels.
class SegNet {
 public:
  // Replaces conv2d for one kernel; receives the index into param_specs().
  using ConvHook = std::function<Var(std::size_t param_index, Var input, Var kernel)>;

  explicit SegNet(SegNetConfig cfg);

  const SegNetConfig& config() const noexcept { return cfg_; }
  const std::vector<ParamSpec>& param_specs() const noexcept { return specs_; }

  // Seeded He-uniform weights, zero biases.
  ModelParams init(std::uint64_t seed) const;

  // [H, W, N] logits.
  Var forward(Tape& tape, std::span<const Var> params, const Image& image, const ConvHook& hook = {}) const;

  Tensor logits(const ModelParams& params, const Image& image) const;
  ProbMap predict(const ModelParams& params, const Image& image, Source source = Source::Client) const;

  // Throws FingerprintMismatch / ShapeMismatch when params do not fit.
  void check(const ModelParams& params) const;

 private:
  SegNetConfig cfg_;
  std::vector<ParamSpec> specs_;
};

std::pair<ModelParams, SegNet> build_segnet(const SegNetConfig& cfg, std::uint64_t seed);

// Recovers (base_channels, depth, num_classes) from parameter shapes; height
// and width are taken from the caller since they leave no trace in weights.
std::optional<SegNetConfig> infer_config(const ModelParams& params, std::size_t height, std::size_t width);

// ---- optimisation --------------------------------------------------------

enum class OptimizerKind { Sgd, AdamW };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Sgd;
  float lr = 0.05f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.01f;
};

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

  void step(std::span<Tensor* const> params, std::span<const Tensor> grads);

 private:
  OptimizerConfig cfg_;
  std::size_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

struct TrainOptions {
  std::size_t epochs = 10;
  std::size_t batch_size = 4;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
};

// Builds the mean loss of one mini-batch from tape variables bound to the
// trainable tensors.
using BatchLossFn = std::function<Var(Tape& tape, std::span<const Var> vars, std::span<const std::size_t> batch)>;

// Shuffled mini-batch training over `n_items` items. Returns the mean batch
// loss of every epoch (measured before each update).
std::vector<double> run_epochs(std::span<Tensor* const> trainable, std::size_t n_items, const TrainOptions& opts,
                               const BatchLossFn& loss_fn);

struct TrainResult {
  ModelParams params;
  std::vector<double> epoch_losses;
};

// Mean per-pixel cross-entropy against the masks. Throws EmptyDataset.
TrainResult train_supervised(const SegNet& net, ModelParams params, std::span<const Sample> data,
                             const TrainOptions& opts);

// ---- low-rank adaptation -------------------------------------------------

struct LoraConfig {
  std::vector<std::string> targets;
  std::size_t rank = 2;
  float alpha = 4.0f;
  float dropout = 0.1f;
};

struct LoraPair {
  std::string layer;
  std::size_t param_index = 0;
  Tensor a;  // [r, in]
  Tensor b;  // [out, r]
};

struct LoraAdapter {
  LoraConfig cfg;
  std::vector<LoraPair> pairs;

  float scale() const noexcept { return cfg.alpha / static_cast<float>(cfg.rank); }
};

// Kernel-name targets (e.g. "dec0.conv1.w") in a net's conv layers. Throws
// UnknownLayer, RankTooLarge or InvalidConfig.
void validate_lora(const SegNet& net, const LoraConfig& cfg);

// A is He-uniform, B is zero, so the adapted net starts equal to the base.
LoraAdapter make_lora(const SegNet& net, const LoraConfig& cfg, std::uint64_t seed);

// (alpha/r) * B A as an [out, in] matrix.
Var lora_delta(Var a, Var b, float scale);

// Base weights frozen, adapter pairs trainable.
class LoraModel {
 public:
  LoraModel(SegNet net, ModelParams base, LoraAdapter adapter);

  const SegNet& net() const noexcept { return net_; }
  const ModelParams& base() const noexcept { return base_; }
  const LoraAdapter& adapter() const noexcept { return adapter_; }
  LoraAdapter& adapter() noexcept { return adapter_; }

  // Adapter tensors in order a0, b0, a1, b1, ...
  std::vector<Tensor*> trainable();

  // Base params are recorded as constants; `adapter_vars` follow trainable()
  // order. With a dropout rng the low-rank path sees a dropped-out input.
  Var forward(Tape& tape, std::span<const Var> adapter_vars, const Image& image, Rng* dropout_rng = nullptr,
              std::vector<Var>* base_vars = nullptr) const;

  // Base plus the scaled low-rank update, as ordinary SegNet params.
  ModelParams merged() const;

  std::vector<double> fine_tune(std::span<const Sample> data, const TrainOptions& opts);

 private:
  SegNet net_;
  ModelParams base_;
  LoraAdapter adapter_;
};

LoraModel apply_lora(const SegNet& net, ModelParams base, LoraAdapter adapter);

}  // namespace samfed
