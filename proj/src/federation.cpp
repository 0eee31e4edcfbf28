#include "samfed/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <map>
#include <ostream>
#include <thread>

#include "samfed/error.hpp"
#include "samfed/losses.hpp"

namespace samfed {

std::string_view to_string(Mode mode) noexcept {
  return mode == Mode::Homogeneous ? "homogeneous" : "heterogeneous";
}

Mode parse_mode(std::string_view name) {
  if (name == "homogeneous") return Mode::Homogeneous;
  if (name == "heterogeneous") return Mode::Heterogeneous;
  throw Error(Errc::ConfigError, "unknown mode '" + std::string(name) + "'");
}

void ExperimentConfig::sync_shapes() {
  auto fit = [&](SegNetConfig& c) {
    c.height = c.width = image_size;
    c.num_classes = num_classes;
  };
  for (auto& c : clients) fit(c);
  fit(global);
  fit(teacher);
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(Errc::ConfigError, msg); };
  if (threads == 0) fail("threads must be >= 1");
  if (batch_size == 0) fail("batch_size must be >= 1");
  if (image_size < 8) fail("image_size must be >= 8");
  if (!(noise_sd >= 0.0f)) fail("noise_sd must be non-negative");
  if (!(beta >= 0.0f)) fail("beta must be non-negative");
  if (!(optimizer.lr >= 0.0f)) fail("lr must be non-negative");
  if (!(local_lr >= 0.0f)) fail("local_lr must be non-negative");
  if (foundation_styles.empty()) fail("foundation_styles must name at least one style");
  partition.validate();
  if (clients.size() != partition.client_counts.size()) {
    fail(std::to_string(clients.size()) + " client networks configured for " +
         std::to_string(partition.client_counts.size()) + " clients");
  }
  auto check_net = [&](const SegNetConfig& c, const std::string& role) {
    if (c.height != image_size || c.width != image_size || c.num_classes != num_classes) {
      fail(role + " network does not match image_size / num_classes");
    }
    c.validate();
  };
  for (std::size_t k = 0; k < clients.size(); ++k) check_net(clients[k], "client " + std::to_string(k + 1));
  check_net(global, "global");
  check_net(teacher, "teacher");
  if (mode == Mode::Homogeneous) {
    for (const auto& c : clients)
      if (!(c == clients.front())) fail("homogeneous mode requires identical client architectures");
  }
  validate_lora(SegNet(teacher), lora);
}

namespace {

// Runs fn(i) for i in [0, n) on up to `threads` workers. The first failure
// by index is rethrown so errors do not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  auto guarded = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) guarded(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) guarded(i);
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

TrainOptions train_options(const ExperimentConfig& cfg, std::size_t epochs, std::uint64_t seed) {
  return {epochs, cfg.batch_size, cfg.optimizer, seed};
}

OptimizerConfig local_optimizer(const ExperimentConfig& cfg) {
  OptimizerConfig opt = cfg.optimizer;
  if (cfg.local_lr > 0.0f) opt.lr = cfg.local_lr;
  return opt;
}

// Stream tags keep every random consumer independent.
enum Tag : std::uint64_t {
  kFoundationData = 0xf0,
  kFoundationInit,
  kFoundationTrain,
  kFoundationMasks,
  kAdapterInit,
  kAdapterTrain,
  kModelInit,
  kModelTrain,
  kLocal,
  kFusion,
};

}  // namespace

ModelParams pretrain_foundation(const ExperimentConfig& cfg) {
  cfg.validate();
  Dataset corpus;
  const std::size_t styles = cfg.foundation_styles.size();
  for (std::size_t s = 0; s < styles; ++s) {
    const std::size_t count = cfg.foundation_count / styles + (s < cfg.foundation_count % styles ? 1 : 0);
    Dataset part = generate_synthetic(count, cfg.image_size, cfg.foundation_styles[s], cfg.noise_sd,
                                      derive_seed(cfg.foundation_seed, {kFoundationData, s}),
                                      std::size_t{1} << cfg.teacher.depth);
    // Corpus outlines are drawn with varying slack around the true shape.
    Rng rng = make_rng(cfg.foundation_seed, {kFoundationMasks, s});
    for (auto& x : part) {
      const auto radius = std::uniform_int_distribution<std::size_t>(0, cfg.foundation_dilation)(rng);
      if (radius > 0) x.mask = dilate(x.mask, radius);
      corpus.push_back(std::move(x));
    }
  }
  quantize_8bit(corpus);
  SegNet net(cfg.teacher);
  ModelParams init = net.init(derive_seed(cfg.foundation_seed, {kFoundationInit}));
  return train_supervised(net, std::move(init), corpus,
                          train_options(cfg, cfg.foundation_epochs,
                                        derive_seed(cfg.foundation_seed, {kFoundationTrain})))
      .params;
}

Partition prepare_data(const ExperimentConfig& cfg) {
  cfg.validate();
  std::size_t needed = cfg.partition.public_count;
  for (auto c : cfg.partition.client_counts) needed += c;
  Dataset pool;
  if (cfg.data_dir.empty()) {
    std::size_t multiple = 1;
    for (const auto& c : cfg.clients) multiple = std::max(multiple, std::size_t{1} << c.depth);
    multiple = std::max(multiple, std::size_t{1} << cfg.global.depth);
    multiple = std::max(multiple, std::size_t{1} << cfg.teacher.depth);
    pool = generate_mixture(std::max(needed, cfg.dataset_size), cfg.image_size, cfg.noise_sd, cfg.seed, multiple);
    quantize_8bit(pool);
  } else {
    pool = load_pgm_dataset(cfg.data_dir, cfg.num_classes);
    for (const auto& s : pool) {
      if (s.image.height != cfg.image_size || s.image.width != cfg.image_size) {
        throw Error(Errc::ConfigError, "images in " + cfg.data_dir + " are not " + std::to_string(cfg.image_size) +
                                           "x" + std::to_string(cfg.image_size));
      }
    }
  }
  return partition(pool, cfg.partition, cfg.seed);
}

Federation initialize(const ExperimentConfig& cfg, const Partition& data, const ModelParams* foundation) {
  cfg.validate();
  if (data.public_set.empty()) throw Error(Errc::EmptyPublicSet, "the public labeled set is empty");
  if (data.clients.size() != cfg.clients.size()) {
    throw Error(Errc::ConfigError, "partition has " + std::to_string(data.clients.size()) + " clients, config " +
                                       std::to_string(cfg.clients.size()));
  }
  for (std::size_t k = 0; k < data.clients.size(); ++k) {
    if (data.clients[k].train.empty() || data.clients[k].test.empty()) {
      throw Error(Errc::ConfigError, "client " + std::to_string(k + 1) + " needs non-empty train and test splits");
    }
  }

  Federation fed;
  ServerState& server = fed.server;
  server.mode = cfg.mode;
  server.public_data = data.public_set;

  // Teacher: frozen backbone plus a low-rank adapter tuned on the public set.
  server.teacher_net = SegNet(cfg.teacher);
  {
    ModelParams backbone = foundation != nullptr ? *foundation : pretrain_foundation(cfg);
    server.teacher_net.check(backbone);
    LoraModel teacher(server.teacher_net, std::move(backbone),
                      make_lora(server.teacher_net, cfg.lora, derive_seed(cfg.seed, {kAdapterInit})));
    teacher.fine_tune(server.public_data,
                      train_options(cfg, cfg.teacher_epochs, derive_seed(cfg.seed, {kAdapterTrain})));
    server.adapter = teacher.adapter();
    server.teacher = teacher.merged();
  }

  // Supervised pretraining depends only on the architecture, so networks of
  // the same shape start from the same weights and are trained once.
  std::map<std::uint64_t, ModelParams> pretrained;
  auto pretrain = [&](const SegNetConfig& c) -> const ModelParams& {
    const std::uint64_t fp = c.fingerprint();
    if (auto it = pretrained.find(fp); it != pretrained.end()) return it->second;
    SegNet net(c);
    ModelParams init = net.init(derive_seed(cfg.seed, {kModelInit, fp}));
    auto trained = train_supervised(net, std::move(init), server.public_data,
                                    train_options(cfg, cfg.pretrain_epochs, derive_seed(cfg.seed, {kModelTrain, fp})));
    return pretrained.emplace(fp, std::move(trained.params)).first->second;
  };

  const SegNetConfig& global_cfg = cfg.mode == Mode::Homogeneous ? cfg.clients.front() : cfg.global;
  server.global_net = SegNet(global_cfg);
  server.global = pretrain(global_cfg);

  for (std::size_t k = 0; k < cfg.clients.size(); ++k) {
    ClientState c{"C" + std::to_string(k + 1), SegNet(cfg.clients[k]), pretrain(cfg.clients[k]),
                  data.clients[k].train, data.clients[k].test, {}, {}, 0, false};
    c.n_samples = c.unlabeled.size();
    fed.clients.push_back(std::move(c));
  }

  // One teacher pass per unlabeled image; the teacher never changes again.
  parallel_for(fed.clients.size(), cfg.threads, [&](std::size_t k) {
    ClientState& c = fed.clients[k];
    c.teacher_maps.reserve(c.unlabeled.size());
    for (const auto& s : c.unlabeled) c.teacher_maps.push_back(server.teacher_net.predict(server.teacher, s.image, Source::Teacher));
    c.pseudo.resize(c.unlabeled.size());
    c.initialized = true;
  });
  return fed;
}

ClientRoundStats client_round(ClientState& client, const LocalOptions& opts) {
  if (!client.initialized || client.teacher_maps.size() != client.unlabeled.size()) {
    throw Error(Errc::NotInitialized, "client " + client.id + " has not been initialized");
  }
  const std::size_t n = client.unlabeled.size();
  client.pseudo.resize(n);
  std::vector<Tensor*> trainable;
  for (auto& e : client.params.entries) trainable.push_back(&e.tensor);
  TrainOptions topts{opts.epochs, opts.batch_size, opts.optimizer, opts.seed};

  for (std::size_t i = 0; i < n; ++i) {
    client.pseudo[i] =
        fuse(client.teacher_maps[i], client.net.predict(client.params, client.unlabeled[i].image), opts.policy);
  }
  ClientRoundStats stats;
  stats.epoch_losses = run_epochs(trainable, n, topts, [&](Tape& tape, std::span<const Var> vars,
                                                           std::span<const std::size_t> batch) {
    BatchU items;
    for (auto i : batch) items.push_back({client.net.forward(tape, vars, client.unlabeled[i].image), &client.pseudo[i]});
    return batch_unsup_loss(items);
  });
  for (const auto& pl : client.pseudo) {
    stats.mean_lambda += mean_weight(pl);
    stats.agreement_rate += agreement_rate(pl);
  }
  stats.mean_lambda /= static_cast<double>(n);
  stats.agreement_rate /= static_cast<double>(n);
  stats.unsup_loss = stats.epoch_losses.empty() ? 0.0 : stats.epoch_losses.back();
  return stats;
}

ModelParams fedavg(std::span<const ModelParams> models, std::span<const double> weights) {
  if (models.empty()) throw Error(Errc::EmptyDataset, "fedavg needs at least one model");
  if (weights.size() != models.size()) throw Error(Errc::ShapeMismatch, "fedavg: one weight per model required");
  double total = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw Error(Errc::ZeroWeight, "fedavg weights must be positive");
    total += w;
  }
  const ModelParams& first = models.front();
  for (const auto& m : models) {
    if (m.fingerprint != first.fingerprint || m.entries.size() != first.entries.size()) {
      throw Error(Errc::FingerprintMismatch, "fedavg over different architectures");
    }
    for (std::size_t e = 0; e < m.entries.size(); ++e) {
      if (m.entries[e].name != first.entries[e].name || m.entries[e].tensor.shape() != first.entries[e].tensor.shape()) {
        throw Error(Errc::FingerprintMismatch, "fedavg: parameter " + first.entries[e].name + " differs");
      }
    }
  }
  ModelParams out = first;
  std::vector<double> acc;
  for (std::size_t e = 0; e < out.entries.size(); ++e) {
    acc.assign(out.entries[e].tensor.numel(), 0.0);
    for (std::size_t k = 0; k < models.size(); ++k) {
      const auto src = models[k].entries[e].tensor.data();
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += weights[k] * static_cast<double>(src[j]);
    }
    auto dst = out.entries[e].tensor.mutable_data();
    for (std::size_t j = 0; j < acc.size(); ++j) dst[j] = static_cast<float>(acc[j] / total);
  }
  return out;
}

std::vector<ProbMap> condense(const std::vector<std::vector<ProbMap>>& maps, const Dataset& public_data) {
  if (maps.empty()) throw Error(Errc::EmptyDataset, "condensation needs at least one client");
  for (const auto& m : maps) {
    if (m.size() != public_data.size()) throw Error(Errc::ShapeMismatch, "one prediction per public image required");
  }
  std::vector<ProbMap> soft;
  soft.reserve(public_data.size());
  std::vector<double> w(maps.size());
  for (std::size_t i = 0; i < public_data.size(); ++i) {
    const Shape& shape = maps[0][i].probs.shape();
    double total = 0.0;
    for (std::size_t k = 0; k < maps.size(); ++k) {
      if (maps[k][i].probs.shape() != shape) throw Error(Errc::ShapeMismatch, "client predictions differ in shape");
      w[k] = evaluate(hard_labels(maps[k][i]), public_data[i].mask, maps[k][i].classes()).dice;
      total += w[k];
    }
    if (total <= 0.0) {
      std::fill(w.begin(), w.end(), 1.0);
      total = static_cast<double>(maps.size());
    }
    std::vector<double> acc(maps[0][i].probs.numel(), 0.0);
    for (std::size_t k = 0; k < maps.size(); ++k) {
      const auto p = maps[k][i].probs.data();
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += w[k] * static_cast<double>(p[j]);
    }
    Tensor out(shape);
    auto dst = out.mutable_data();
    for (std::size_t j = 0; j < acc.size(); ++j) dst[j] = static_cast<float>(acc[j] / total);
    soft.push_back({std::move(out), Source::Client});
  }
  return soft;
}

std::vector<ProbMap> regularity_condensation(std::span<const ClientState> clients, const Dataset& public_data) {
  std::vector<std::vector<ProbMap>> maps;
  for (const auto& c : clients) {
    auto& mine = maps.emplace_back();
    for (const auto& s : public_data) mine.push_back(c.net.predict(c.params, s.image));
  }
  return condense(maps, public_data);
}

std::vector<double> regularity_fusion(ClientState& client, const Dataset& public_data,
                                      const std::vector<ProbMap>& soft_labels, float beta, const TrainOptions& opts) {
  if (soft_labels.size() != public_data.size() || public_data.empty()) {
    throw Error(Errc::MissingSoftLabels, "fusion needs one soft label per public image (" +
                                             std::to_string(soft_labels.size()) + " for " +
                                             std::to_string(public_data.size()) + ")");
  }
  if (beta == 0.0f) return {};
  std::vector<Tensor*> trainable;
  for (auto& e : client.params.entries) trainable.push_back(&e.tensor);
  return run_epochs(trainable, public_data.size(), opts,
                    [&](Tape& tape, std::span<const Var> vars, std::span<const std::size_t> batch) {
                      Var total;
                      for (std::size_t k = 0; k < batch.size(); ++k) {
                        const std::size_t i = batch[k];
                        Var kl = kl_fusion_loss(client.net.forward(tape, vars, public_data[i].image), soft_labels[i]);
                        total = k == 0 ? kl : add(total, kl);
                      }
                      return mul_scalar(total, beta / static_cast<float>(batch.size()));
                    });
}

MetricResult evaluate_model(const SegNet& net, const ModelParams& params, const Dataset& data) {
  if (data.empty()) throw Error(Errc::EmptyDataset, "nothing to evaluate");
  MetricResult mean;
  for (const auto& s : data) {
    const MetricResult r = evaluate(hard_labels(net.predict(params, s.image)), s.mask, net.config().num_classes);
    mean.dice += r.dice;
    mean.hd95 += r.hd95;
  }
  mean.dice /= static_cast<double>(data.size());
  mean.hd95 /= static_cast<double>(data.size());
  return mean;
}

namespace {

double mean_of(const std::vector<ClientReport>& rows, double ClientReport::*field) {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += r.*field;
  return s / static_cast<double>(rows.size());
}

}  // namespace

double RoundReport::mean_dice() const { return mean_of(clients, &ClientReport::dice); }
double RoundReport::mean_hd95() const { return mean_of(clients, &ClientReport::hd95); }
double RoundReport::mean_agreement() const { return mean_of(clients, &ClientReport::agreement_rate); }

std::vector<RoundReport> run_rounds(Federation& fed, const ExperimentConfig& cfg, const RoundCallback& on_round) {
  cfg.validate();
  std::vector<RoundReport> reports;
  const std::size_t n_clients = fed.clients.size();
  for (std::size_t r = 1; r <= cfg.rounds; ++r) {
    std::vector<ClientRoundStats> stats(n_clients);
    parallel_for(n_clients, cfg.threads, [&](std::size_t k) {
      LocalOptions opts{cfg.local_epochs, cfg.batch_size, local_optimizer(cfg), cfg.policy,
                        derive_seed(cfg.seed, {kLocal, r, k})};
      stats[k] = client_round(fed.clients[k], opts);
    });

    // Barrier: aggregation only sees fully finished local rounds.
    if (fed.server.mode == Mode::Homogeneous) {
      std::vector<ModelParams> models;
      std::vector<double> weights;
      for (const auto& c : fed.clients) {
        models.push_back(c.params);
        weights.push_back(static_cast<double>(c.n_samples));
      }
      fed.server.global = fedavg(models, weights);
      for (auto& c : fed.clients) c.params = fed.server.global;
    } else {
      fed.server.soft_labels = regularity_condensation(fed.clients, fed.server.public_data);
      parallel_for(n_clients, cfg.threads, [&](std::size_t k) {
        regularity_fusion(fed.clients[k], fed.server.public_data, fed.server.soft_labels, cfg.beta,
                          {cfg.rf_epochs, cfg.batch_size, local_optimizer(cfg), derive_seed(cfg.seed, {kFusion, r, k})});
      });
    }
    fed.server.round = r;

    RoundReport report{r, std::vector<ClientReport>(n_clients)};
    parallel_for(n_clients, cfg.threads, [&](std::size_t k) {
      const ClientState& c = fed.clients[k];
      const MetricResult m = evaluate_model(c.net, c.params, c.test);
      report.clients[k] = {c.id, m.dice, m.hd95, stats[k].mean_lambda, stats[k].agreement_rate, stats[k].unsup_loss,
                           c.pseudo.front()};
    });
    if (on_round) on_round(report);
    reports.push_back(std::move(report));
  }
  return reports;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const RoundCallback& on_round) {
  ExperimentResult result;
  result.data = prepare_data(cfg);
  result.federation = initialize(cfg, result.data);
  result.reports = run_rounds(result.federation, cfg, on_round);
  return result;
}

void write_report_csv(std::ostream& out, std::span<const RoundReport> reports) {
  out << "round,client,dice,hd95,mean_lambda,agreement_rate,unsup_loss\n";
  char buf[256];
  for (const auto& r : reports) {
    for (const auto& c : r.clients) {
      std::snprintf(buf, sizeof buf, "%zu,%s,%.6f,%.6f,%.6f,%.6f,%.6f\n", r.round, c.client.c_str(), c.dice, c.hd95,
                    c.mean_lambda, c.agreement_rate, c.unsup_loss);
      out << buf;
    }
  }
}

}  // namespace samfed
