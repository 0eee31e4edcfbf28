#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "samfed/agreement.hpp"
#include "samfed/data.hpp"
#include "samfed/metrics.hpp"
#include "samfed/models.hpp"

namespace samfed {

enum class Mode { Homogeneous, Heterogeneous };

std::string_view to_string(Mode mode) noexcept;
Mode parse_mode(std::string_view name);

struct ExperimentConfig {
  Mode mode = Mode::Homogeneous;
  PseudoLabelPolicy policy = PseudoLabelPolicy::Agreement;
  std::size_t rounds = 10;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  // Data. With an empty data_dir a synthetic style mixture is generated.
  std::size_t image_size = 64;
  std::size_t num_classes = 2;
  float noise_sd = 0.1f;
  std::string data_dir;
  std::size_t dataset_size = 0;  // 0 = exactly what the partition needs
  PartitionSpec partition;

  // One network per client; homogeneous mode requires them all equal.
  std::vector<SegNetConfig> clients{4, SegNetConfig{}};
  // Server global model, only consulted in heterogeneous mode (homogeneous
  // mode uses the client architecture).
  SegNetConfig global;
  SegNetConfig teacher{16, 2, 2, 64, 64};
  LoraConfig lora{{"dec0.conv1.w", "dec0.conv2.w"}, 2, 4.0f, 0.1f};

  // Teacher backbone pretraining on a fixed corpus that is independent of
  // the experiment seed.
  std::size_t foundation_count = 60;
  std::vector<Style> foundation_styles{Style::Blob, Style::Ring, Style::MultiBlob};
  std::size_t foundation_epochs = 20;
  std::size_t foundation_dilation = 4;  // corpus outlines overshoot by up to this many pixels
  std::uint64_t foundation_seed = 0;

  std::size_t teacher_epochs = 10;   // adapter fine-tuning on the public set
  std::size_t pretrain_epochs = 40;  // global and client models on the public set
  std::size_t local_epochs = 1;      // unsupervised epochs per round
  std::size_t rf_epochs = 1;         // fusion epochs per round (heterogeneous)
  std::size_t batch_size = 4;
  OptimizerConfig optimizer{OptimizerKind::AdamW, 1e-3f};
  float local_lr = 0.0f;  // learning rate inside rounds; 0 = optimizer.lr
  float beta = 0.5f;

  std::string out_dir = "out";

  // Keeps the per-network sizes in step with image_size / num_classes.
  void sync_shapes();
  // Throws ConfigError / InvalidConfig and the LoRA validation errors.
  void validate() const;
};

struct ClientState {
  std::string id;
  SegNet net;
  ModelParams params;
  Dataset unlabeled;  // training split; masks are never read during training
  Dataset test;
  std::vector<ProbMap> teacher_maps;    // one per unlabeled image
  std::vector<PseudoLabelSet> pseudo;   // rebuilt at the start of every round
  std::size_t n_samples = 0;
  bool initialized = false;
};

struct ServerState {
  Mode mode = Mode::Homogeneous;
  SegNet teacher_net{SegNetConfig{}};
  ModelParams teacher;  // base with the adapter merged in
  LoraAdapter adapter;
  SegNet global_net{SegNetConfig{}};
  ModelParams global;
  Dataset public_data;
  std::vector<ProbMap> soft_labels;
  std::size_t round = 0;
};

struct Federation {
  ServerState server;
  std::vector<ClientState> clients;
};

// Backbone the teacher adapter is attached to.
ModelParams pretrain_foundation(const ExperimentConfig& cfg);

// Builds the data pool of an experiment (generated or loaded) and splits it.
Partition prepare_data(const ExperimentConfig& cfg);

// Teacher adapter fine-tuning and global/client pretraining on the public
// set, then one cached teacher inference per unlabeled client image. A null
// foundation is pretrained on the spot. Throws EmptyPublicSet.
Federation initialize(const ExperimentConfig& cfg, const Partition& data, const ModelParams* foundation = nullptr);

struct LocalOptions {
  std::size_t epochs = 1;
  std::size_t batch_size = 4;
  OptimizerConfig optimizer;
  PseudoLabelPolicy policy = PseudoLabelPolicy::Agreement;
  std::uint64_t seed = 0;
};

struct ClientRoundStats {
  double mean_lambda = 0.0;
  double agreement_rate = 0.0;
  double unsup_loss = 0.0;  // mean batch loss of the last epoch
  std::vector<double> epoch_losses;
};

// Local self-training on the unlabeled split. Pseudo-labels are rebuilt once
// from the client's prediction at the start of the round and stay fixed for
// its epochs. Throws NotInitialized.
ClientRoundStats client_round(ClientState& client, const LocalOptions& opts);

// Sample-weighted parameter mean. Throws FingerprintMismatch, ZeroWeight.
ModelParams fedavg(std::span<const ModelParams> models, std::span<const double> weights);

// maps[k][i] is client k's prediction of public image i. Each client is
// weighted per image by its Dice against the public mask; all-zero weights
// fall back to the plain mean.
std::vector<ProbMap> condense(const std::vector<std::vector<ProbMap>>& maps, const Dataset& public_data);
std::vector<ProbMap> regularity_condensation(std::span<const ClientState> clients, const Dataset& public_data);

// Gradient steps on beta * KL(soft || client) over the public set. Returns
// the per-epoch losses. Throws MissingSoftLabels.
std::vector<double> regularity_fusion(ClientState& client, const Dataset& public_data,
                                      const std::vector<ProbMap>& soft_labels, float beta, const TrainOptions& opts);

MetricResult evaluate_model(const SegNet& net, const ModelParams& params, const Dataset& data);

struct ClientReport {
  std::string client;
  double dice = 0.0;
  double hd95 = 0.0;
  double mean_lambda = 0.0;
  double agreement_rate = 0.0;
  double unsup_loss = 0.0;
  PseudoLabelSet sample;  // pseudo-labels of the client's first unlabeled image
};

struct RoundReport {
  std::size_t round = 0;
  std::vector<ClientReport> clients;

  double mean_dice() const;
  double mean_hd95() const;
  double mean_agreement() const;
};

using RoundCallback = std::function<void(const RoundReport&)>;

// Runs cfg.rounds rounds on an initialized federation.
std::vector<RoundReport> run_rounds(Federation& fed, const ExperimentConfig& cfg, const RoundCallback& on_round = {});

struct ExperimentResult {
  Partition data;
  Federation federation;
  std::vector<RoundReport> reports;
};

ExperimentResult run_experiment(const ExperimentConfig& cfg, const RoundCallback& on_round = {});

void write_report_csv(std::ostream& out, std::span<const RoundReport> reports);

}  // namespace samfed
