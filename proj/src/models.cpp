#include "samfed/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "samfed/error.hpp"
#include "samfed/losses.hpp"

namespace samfed {

void SegNetConfig::validate() const {
  if (base_channels == 0) throw Error(Errc::InvalidConfig, "base_channels must be positive");
  if (depth < 1 || depth > 5) throw Error(Errc::InvalidConfig, "depth must be in [1, 5]");
  if (num_classes < 2 || num_classes > 255) throw Error(Errc::InvalidConfig, "num_classes must be in [2, 255]");
  const std::size_t m = std::size_t{1} << depth;
  if (height == 0 || width == 0 || height % m != 0 || width % m != 0) {
    throw Error(Errc::InvalidConfig, "input size " + std::to_string(height) + "x" + std::to_string(width) +
                                         " is not divisible by 2^depth = " + std::to_string(m));
  }
}

std::uint64_t SegNetConfig::fingerprint() const noexcept {
  // FNV-1a over the little-endian u64 fields.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint64_t v : {std::uint64_t{base_channels}, std::uint64_t{depth}, std::uint64_t{num_classes},
                          std::uint64_t{height}, std::uint64_t{width}}) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

const Tensor& ModelParams::at(std::string_view name) const {
  if (auto i = index_of(name)) return entries[*i].tensor;
  throw Error(Errc::UnknownLayer, "no parameter named " + std::string(name));
}

std::optional<std::size_t> ModelParams::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].name == name) return i;
  return std::nullopt;
}

std::size_t ModelParams::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.tensor.numel();
  return n;
}

bool bitwise_equal(const ModelParams& a, const ModelParams& b) noexcept {
  if (a.fingerprint != b.fingerprint || a.entries.size() != b.entries.size()) return false;
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    if (a.entries[i].name != b.entries[i].name || !bitwise_equal(a.entries[i].tensor, b.entries[i].tensor)) {
      return false;
    }
  }
  return true;
}

namespace {

void add_conv(std::vector<ParamSpec>& specs, const std::string& prefix, std::size_t k, std::size_t cin,
              std::size_t cout) {
  specs.push_back({prefix + ".w", {k, k, cin, cout}, k * k * cin, false});
  specs.push_back({prefix + ".b", {cout}, k * k * cin, true});
}

// Zero mean, unit variance per image; a flat image maps to all zeros.
Tensor standardize(const Image& image) {
  Tensor t = image.as_tensor();
  auto v = t.mutable_data();
  double mean = 0.0, sq = 0.0;
  for (float p : v) mean += p;
  mean /= static_cast<double>(v.size());
  for (float p : v) sq += (p - mean) * (p - mean);
  const double sd = std::sqrt(sq / static_cast<double>(v.size()));
  const double inv = sd > 1e-6 ? 1.0 / sd : 0.0;
  for (auto& p : v) p = static_cast<float>((p - mean) * inv);
  return t;
}

}  // namespace

SegNet::SegNet(SegNetConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t d = cfg_.depth;
  auto width = [&](std::size_t s) { return cfg_.base_channels << s; };
  for (std::size_t s = 0; s < d; ++s) {
    const std::string p = "enc" + std::to_string(s);
    add_conv(specs_, p + ".conv1", 3, s == 0 ? 1 : width(s - 1), width(s));
    add_conv(specs_, p + ".conv2", 3, width(s), width(s));
  }
  add_conv(specs_, "mid.conv1", 3, width(d - 1), width(d));
  add_conv(specs_, "mid.conv2", 3, width(d), width(d));
  for (std::size_t s = d; s-- > 0;) {
    const std::string p = "dec" + std::to_string(s);
    add_conv(specs_, p + ".conv1", 3, width(s + 1) + width(s), width(s));
    add_conv(specs_, p + ".conv2", 3, width(s), width(s));
  }
  add_conv(specs_, "head", 1, width(0), cfg_.num_classes);
}

ModelParams SegNet::init(std::uint64_t seed) const {
  ModelParams params;
  params.fingerprint = cfg_.fingerprint();
  Rng rng = make_rng(seed, {0x5e9e7ULL});
  for (const auto& spec : specs_) {
    Tensor t(spec.shape, 0.0f);
    if (!spec.is_bias) {
      const float bound = std::sqrt(6.0f / static_cast<float>(spec.fan_in));
      for (auto& v : t.mutable_data()) v = uniform(rng, -bound, bound);
    }
    params.entries.push_back({spec.name, std::move(t)});
  }
  return params;
}

void SegNet::check(const ModelParams& params) const {
  if (params.fingerprint != cfg_.fingerprint()) {
    throw Error(Errc::FingerprintMismatch, "parameter fingerprint does not match the network configuration");
  }
  if (params.entries.size() != specs_.size()) throw Error(Errc::ShapeMismatch, "parameter count mismatch");
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    if (params.entries[i].name != specs_[i].name || params.entries[i].tensor.shape() != specs_[i].shape) {
      throw Error(Errc::ShapeMismatch, "parameter " + specs_[i].name + " does not match");
    }
  }
}

Var SegNet::forward(Tape& tape, std::span<const Var> params, const Image& image, const ConvHook& hook) const {
  if (params.size() != specs_.size()) throw Error(Errc::ShapeMismatch, "forward: wrong number of parameters");
  if (image.height != cfg_.height || image.width != cfg_.width) {
    throw Error(Errc::ShapeMismatch, "forward: image is " + std::to_string(image.height) + "x" +
                                         std::to_string(image.width));
  }
  std::size_t next = 0;
  auto conv = [&](Var x, bool activate) {
    const std::size_t wi = next;
    Var y = hook ? hook(wi, x, params[wi]) : conv2d(x, params[wi]);
    y = add_channel_bias(y, params[wi + 1]);
    next += 2;
    return activate ? relu(y) : y;
  };

  Var x = tape.constant(standardize(image));
  std::vector<Var> skips;
  for (std::size_t s = 0; s < cfg_.depth; ++s) {
    x = conv(conv(x, true), true);
    skips.push_back(x);
    x = downsample2x_avg(x);
  }
  x = conv(conv(x, true), true);
  for (std::size_t s = cfg_.depth; s-- > 0;) {
    x = concat_channels(upsample2x_nearest(x), skips[s]);
    x = conv(conv(x, true), true);
  }
  return conv(x, false);
}

Tensor SegNet::logits(const ModelParams& params, const Image& image) const {
  check(params);
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(params.entries.size());
  for (const auto& e : params.entries) vars.push_back(tape.constant(e.tensor));
  return forward(tape, vars, image).value();
}

ProbMap SegNet::predict(const ModelParams& params, const Image& image, Source source) const {
  return softmax_channels(logits(params, image), source);
}

std::pair<ModelParams, SegNet> build_segnet(const SegNetConfig& cfg, std::uint64_t seed) {
  SegNet net(cfg);
  ModelParams params = net.init(seed);
  return {std::move(params), std::move(net)};
}

std::optional<SegNetConfig> infer_config(const ModelParams& params, std::size_t height, std::size_t width) {
  std::size_t depth = 0;
  while (params.index_of("enc" + std::to_string(depth) + ".conv1.w")) ++depth;
  const auto first = params.index_of("enc0.conv1.w");
  const auto head = params.index_of("head.w");
  if (depth == 0 || !first || !head) return std::nullopt;
  const Tensor& k0 = params.entries[*first].tensor;
  const Tensor& kh = params.entries[*head].tensor;
  if (k0.rank() != 4 || kh.rank() != 4) return std::nullopt;
  SegNetConfig cfg{k0.dim(3), depth, kh.dim(3), height, width};
  try {
    SegNet(cfg).check(params);
  } catch (const Error&) {
    return std::nullopt;
  }
  return cfg;
}

// ---- optimisation --------------------------------------------------------

void Optimizer::step(std::span<Tensor* const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) throw Error(Errc::ShapeMismatch, "optimizer: params/grads count differ");
  ++t_;
  if (cfg_.kind == OptimizerKind::Sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto p = params[i]->mutable_data();
      const auto g = grads[i].data();
      for (std::size_t j = 0; j < p.size(); ++j) p[j] -= cfg_.lr * g[j];
    }
    return;
  }
  if (m_.empty()) {
    for (auto* p : params) {
      m_.emplace_back(p->numel(), 0.0f);
      v_.emplace_back(p->numel(), 0.0f);
    }
  }
  const float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(t_));
  const float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->mutable_data();
    const auto g = grads[i].data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0f - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0f - cfg_.beta2) * g[j] * g[j];
      const float mhat = m[j] / bc1;
      const float vhat = v[j] / bc2;
      p[j] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p[j]);
    }
  }
}

std::vector<double> run_epochs(std::span<Tensor* const> trainable, std::size_t n_items, const TrainOptions& opts,
                               const BatchLossFn& loss_fn) {
  if (n_items == 0) throw Error(Errc::EmptyDataset, "no training items");
  const std::size_t bs = std::max<std::size_t>(1, opts.batch_size);
  Optimizer optimizer(opts.optimizer);
  std::vector<std::size_t> order(n_items);
  std::vector<double> epoch_losses;
  std::vector<Tensor> grads(trainable.size());
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = make_rng(opts.seed, {0xe90cULL, epoch});
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n_items; start += bs) {
      const std::size_t end = std::min(n_items, start + bs);
      std::span<const std::size_t> batch(order.data() + start, end - start);
      Tape tape;
      std::vector<Var> vars;
      vars.reserve(trainable.size());
      for (auto* t : trainable) vars.push_back(tape.variable(*t));
      Var loss = loss_fn(tape, vars, batch);
      total += loss.value().item();
      ++batches;
      tape.backward(loss);
      for (std::size_t i = 0; i < trainable.size(); ++i) grads[i] = tape.gradient(vars[i]);
      optimizer.step(trainable, grads);
    }
    epoch_losses.push_back(total / static_cast<double>(batches));
  }
  for (std::size_t i = 0; i < trainable.size() && opts.epochs > 0; ++i) {
    trainable[i]->set_grad(std::vector<float>(grads[i].data().begin(), grads[i].data().end()));
  }
  return epoch_losses;
}

TrainResult train_supervised(const SegNet& net, ModelParams params, std::span<const Sample> data,
                             const TrainOptions& opts) {
  if (data.empty()) throw Error(Errc::EmptyDataset, "supervised training needs at least one sample");
  net.check(params);
  for (const auto& s : data) validate_mask(s.mask, net.config().num_classes);
  std::vector<Tensor*> trainable;
  for (auto& e : params.entries) trainable.push_back(&e.tensor);
  auto losses = run_epochs(trainable, data.size(), opts,
                           [&](Tape& tape, std::span<const Var> vars, std::span<const std::size_t> batch) {
                             std::vector<Var> per_item;
                             for (auto i : batch) per_item.push_back(supervised_ce(net.forward(tape, vars, data[i].image), data[i].mask));
                             Var total = per_item[0];
                             for (std::size_t k = 1; k < per_item.size(); ++k) total = add(total, per_item[k]);
                             return mul_scalar(total, 1.0f / static_cast<float>(per_item.size()));
                           });
  return {std::move(params), std::move(losses)};
}

// ---- low-rank adaptation -------------------------------------------------

namespace {

struct KernelDims {
  std::size_t in = 0;
  std::size_t out = 0;
};

KernelDims kernel_dims(const ParamSpec& spec) {
  return {spec.shape[0] * spec.shape[1] * spec.shape[2], spec.shape[3]};
}

std::size_t find_kernel(const SegNet& net, const std::string& name) {
  const auto& specs = net.param_specs();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].name == name && !specs[i].is_bias) return i;
  }
  throw Error(Errc::UnknownLayer, "no conv kernel named " + name);
}

}  // namespace

void validate_lora(const SegNet& net, const LoraConfig& cfg) {
  if (cfg.rank == 0) throw Error(Errc::InvalidConfig, "LoRA rank must be positive");
  if (!(cfg.alpha > 0.0f)) throw Error(Errc::InvalidConfig, "LoRA alpha must be positive");
  if (!(cfg.dropout >= 0.0f && cfg.dropout < 1.0f)) throw Error(Errc::InvalidConfig, "LoRA dropout must be in [0, 1)");
  if (cfg.targets.empty()) throw Error(Errc::InvalidConfig, "LoRA needs at least one target layer");
  for (const auto& name : cfg.targets) {
    const auto dims = kernel_dims(net.param_specs()[find_kernel(net, name)]);
    if (cfg.rank > std::min(dims.in, dims.out)) {
      throw Error(Errc::RankTooLarge, "rank " + std::to_string(cfg.rank) + " exceeds min(in, out) = " +
                                          std::to_string(std::min(dims.in, dims.out)) + " for " + name);
    }
  }
}

LoraAdapter make_lora(const SegNet& net, const LoraConfig& cfg, std::uint64_t seed) {
  validate_lora(net, cfg);
  LoraAdapter adapter{cfg, {}};
  Rng rng = make_rng(seed, {0x10aaULL});
  for (const auto& name : cfg.targets) {
    const std::size_t idx = find_kernel(net, name);
    const auto dims = kernel_dims(net.param_specs()[idx]);
    Tensor a({cfg.rank, dims.in});
    const float bound = std::sqrt(6.0f / static_cast<float>(dims.in));
    for (auto& v : a.mutable_data()) v = uniform(rng, -bound, bound);
    adapter.pairs.push_back({name, idx, std::move(a), Tensor({dims.out, cfg.rank}, 0.0f)});
  }
  return adapter;
}

Var lora_delta(Var a, Var b, float scale) { return mul_scalar(matmul(b, a), scale); }

LoraModel::LoraModel(SegNet net, ModelParams base, LoraAdapter adapter)
    : net_(std::move(net)), base_(std::move(base)), adapter_(std::move(adapter)) {
  net_.check(base_);
  validate_lora(net_, adapter_.cfg);
}

std::vector<Tensor*> LoraModel::trainable() {
  std::vector<Tensor*> out;
  for (auto& p : adapter_.pairs) {
    out.push_back(&p.a);
    out.push_back(&p.b);
  }
  return out;
}

Var LoraModel::forward(Tape& tape, std::span<const Var> adapter_vars, const Image& image, Rng* dropout_rng,
                       std::vector<Var>* base_vars) const {
  if (adapter_vars.size() != 2 * adapter_.pairs.size()) {
    throw Error(Errc::ShapeMismatch, "LoRA forward: wrong number of adapter variables");
  }
  std::vector<Var> base;
  for (const auto& e : base_.entries) base.push_back(tape.constant(e.tensor));
  if (base_vars != nullptr) *base_vars = base;
  const float scale = adapter_.scale();
  const float keep = 1.0f - adapter_.cfg.dropout;
  auto hook = [&](std::size_t idx, Var x, Var kernel) -> Var {
    for (std::size_t k = 0; k < adapter_.pairs.size(); ++k) {
      if (adapter_.pairs[k].param_index != idx) continue;
      const Shape& kshape = kernel.shape();
      Var delta = reshape(transpose(lora_delta(adapter_vars[2 * k], adapter_vars[2 * k + 1], scale)), kshape);
      if (dropout_rng == nullptr || adapter_.cfg.dropout == 0.0f) return conv2d(x, add(kernel, delta));
      Tensor mask(x.shape());
      std::bernoulli_distribution coin(keep);
      for (auto& v : mask.mutable_data()) v = coin(*dropout_rng) ? 1.0f / keep : 0.0f;
      return add(conv2d(x, kernel), conv2d(mul_const(x, mask), delta));
    }
    return conv2d(x, kernel);
  };
  return net_.forward(tape, base, image, hook);
}

ModelParams LoraModel::merged() const {
  ModelParams out = base_;
  for (const auto& p : adapter_.pairs) {
    Tape tape;
    Var kernel = tape.constant(base_.entries[p.param_index].tensor);
    Var delta = reshape(transpose(lora_delta(tape.constant(p.a), tape.constant(p.b), adapter_.scale())), kernel.shape());
    out.entries[p.param_index].tensor = add(kernel, delta).value();
  }
  return out;
}

std::vector<double> LoraModel::fine_tune(std::span<const Sample> data, const TrainOptions& opts) {
  if (data.empty()) throw Error(Errc::EmptyDataset, "LoRA fine-tuning needs at least one sample");
  for (const auto& s : data) validate_mask(s.mask, net_.config().num_classes);
  Rng dropout_rng = make_rng(opts.seed, {0xd50bULL});
  return run_epochs(trainable(), data.size(), opts,
                    [&](Tape& tape, std::span<const Var> vars, std::span<const std::size_t> batch) {
                      Var total;
                      for (std::size_t k = 0; k < batch.size(); ++k) {
                        const auto& s = data[batch[k]];
                        Var l = supervised_ce(forward(tape, vars, s.image, &dropout_rng), s.mask);
                        total = k == 0 ? l : add(total, l);
                      }
                      return mul_scalar(total, 1.0f / static_cast<float>(batch.size()));
                    });
}

LoraModel apply_lora(const SegNet& net, ModelParams base, LoraAdapter adapter) {
  return LoraModel(net, std::move(base), std::move(adapter));
}

}  // namespace samfed
