// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.

#include <sys/wait.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "samfed/config.hpp"
#include "samfed/error.hpp"
#include "samfed/federation.hpp"
#include "samfed/losses.hpp"
#include "samfed/metrics.hpp"

namespace fs = std::filesystem;
using namespace samfed;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

ExperimentConfig scenario(Mode mode) {
  const fs::path dir = fs::path(SAMFED_SOURCE_DIR) / "configs";
  return load_config(dir / (mode == Mode::Homogeneous ? "toy_homogeneous.cfg" : "toy_heterogeneous.cfg"));
}

// ---- 1. equation oracles -------------------------------------------------

Verdict equation_oracles() {
  Stopwatch clock;
  std::mt19937_64 rng(101);
  std::size_t label_mismatch = 0, mask_mismatch = 0;
  double lambda_err = 0.0, ce_err = 0.0, kl_err = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = trial % 2 == 0 ? 2 : 3;
    const ProbMap t = oracle::random_prob_map(rng, 16, 16, n, 3.0f, Source::Teacher);
    const ProbMap c = oracle::random_prob_map(rng, 16, 16, n);
    const PseudoLabelSet pl = fuse(t, c);
    for (std::size_t p = 0; p < t.pixels(); ++p) {
      const auto want = oracle::fuse_pixel(t.pixel(p), c.pixel(p), n);
      label_mismatch += pl.labels.labels[p] != want.label;
      mask_mismatch += (pl.agreement[p] != 0) != want.agree;
      lambda_err = std::max(lambda_err, std::abs(static_cast<double>(pl.weights[p]) - want.weight));
    }
    const Tensor logits = oracle::random_tensor(rng, {16, 16, n}, -4.0f, 4.0f);
    Tape tape;
    const double ce = weighted_ce(tape.constant(logits), pl).value().item();
    ce_err = std::max(ce_err, std::abs(ce - oracle::weighted_ce(logits, pl.labels.labels, pl.weights)));
    kl_err = std::max(kl_err, std::abs(kl_fusion_loss(c, t) - oracle::kl(t.probs, c.probs)));
  }
  const double secs = clock.seconds();
  return {label_mismatch == 0 && mask_mismatch == 0 && lambda_err <= 1e-9 && ce_err <= 1e-6 && kl_err <= 1e-6 &&
              secs < 5.0,
          fmt("1000 pairs: label/mask mismatches %zu/%zu, max |dlambda| %.2e, weighted_ce err %.2e, KL err %.2e, "
              "%.2fs",
              label_mismatch, mask_mismatch, lambda_err, ce_err, kl_err, secs)};
}

// ---- 2. gradient correctness ----------------------------------------------

using OutputFn = std::function<Var(Tape&, std::vector<Var>&)>;
using ReferenceFn = std::function<double(const std::vector<Tensor>&)>;

struct GradResult {
  double max_rel = 0.0;
  std::size_t checked = 0;
};

// The op output is contracted with fixed random weights. The tape gradient of
// that contraction is compared with a central difference whose contraction is
// accumulated in double, so round-off in a float-valued loss does not mask
// the comparison. Scalar losses supply a double-precision reference that
// replaces the float forward pass on the difference side.
GradResult check_op(const std::vector<Tensor>& inputs, const OutputFn& op, const ReferenceFn& reference,
                    std::mt19937_64& rng, double eps, std::size_t coords_per_input) {
  auto outputs = [&](const std::vector<Tensor>& xs) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& x : xs) vars.push_back(tape.variable(x));
    return op(tape, vars).value();
  };
  const Tensor probe = oracle::random_tensor(rng, outputs(inputs).shape());
  Tape tape;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(tape.variable(x));
  tape.backward(sum(mul_const(op(tape, vars), probe)));

  GradResult r;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor analytic = tape.gradient(vars[i]);
    std::vector<std::size_t> coords(inputs[i].numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(std::min(coords.size(), coords_per_input));
    for (auto k : coords) {
      auto plus = inputs, minus = inputs;
      plus[i][k] += static_cast<float>(eps);
      minus[i][k] -= static_cast<float>(eps);
      const double step = static_cast<double>(plus[i][k]) - static_cast<double>(minus[i][k]);
      double diff = 0.0;
      if (reference) {
        diff = static_cast<double>(probe[0]) * (reference(plus) - reference(minus));
      } else {
        const Tensor up = outputs(plus), down = outputs(minus);
        for (std::size_t j = 0; j < up.numel(); ++j) {
          diff += static_cast<double>(probe[j]) * (static_cast<double>(up[j]) - static_cast<double>(down[j]));
        }
      }
      const double numeric = diff / step, a = analytic[k];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      r.max_rel = std::max(r.max_rel, std::abs(a - numeric) / denom);
      ++r.checked;
    }
  }
  return r;
}

// Mean per-pixel KL(server || softmax(logits)) in double precision.
double kl_to_logits(const Tensor& server, const Tensor& logits) {
  const std::size_t n = logits.dim(2), pixels = logits.dim(0) * logits.dim(1);
  double total = 0.0;
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t c = 0; c < n; ++c) {
      const double s = server[p * n + c];
      if (s > 0.0) total += s * (std::log(s) - oracle::log_softmax_at(logits.ptr() + p * n, n, c));
    }
  }
  return total / static_cast<double>(pixels);
}

Verdict gradient_correctness() {
  Stopwatch clock;
  std::mt19937_64 rng(202);
  const double eps = 1e-3;
  auto rt = [&](Shape s, float lo = -1.0f, float hi = 1.0f) { return oracle::random_tensor(rng, std::move(s), lo, hi); };
  auto away_from_zero = [&](Shape s) {
    Tensor t = rt(std::move(s), 0.2f, 1.0f);
    for (std::size_t i = 0; i < t.numel(); i += 2) t[i] = -t[i];
    return t;
  };
  std::vector<std::uint8_t> labels(36);
  for (auto& l : labels) l = static_cast<std::uint8_t>(rng() % 3);
  const Tensor weights = rt({6, 6}, 0.3f, 1.0f);
  const Tensor fixed = rt({5, 5});
  const ProbMap server = oracle::random_prob_map(rng, 6, 6, 3);
  PseudoLabelSet pl;
  pl.labels = Mask(6, 6);
  pl.labels.labels = labels;
  pl.weights = weights;
  const Tensor ones({6, 6}, 1.0f);

  struct Case {
    std::string name;
    std::vector<Tensor> inputs;
    OutputFn op;
    ReferenceFn reference = nullptr;
  };
  std::vector<Case> cases{
      {"matmul", {rt({5, 6}), rt({6, 4})}, [](Tape&, auto& v) { return matmul(v[0], v[1]); }},
      {"transpose", {rt({5, 6})}, [](Tape&, auto& v) { return transpose(v[0]); }},
      {"reshape", {rt({5, 6})}, [](Tape&, auto& v) { return reshape(v[0], {3, 10}); }},
      {"conv2d", {rt({6, 6, 3}), rt({3, 3, 3, 4})}, [](Tape&, auto& v) { return conv2d(v[0], v[1]); }},
      {"add", {rt({5, 5}), rt({5, 5})}, [](Tape&, auto& v) { return add(v[0], v[1]); }},
      {"add_scalar", {rt({5, 5})}, [](Tape&, auto& v) { return add_scalar(v[0], 0.7f); }},
      {"mul_scalar", {rt({5, 5})}, [](Tape&, auto& v) { return mul_scalar(v[0], -1.3f); }},
      {"mul_const", {rt({5, 5})}, [fixed](Tape&, auto& v) { return mul_const(v[0], fixed); }},
      {"add_channel_bias", {rt({4, 4, 3}), rt({3})}, [](Tape&, auto& v) { return add_channel_bias(v[0], v[1]); }},
      {"relu", {away_from_zero({5, 5})}, [](Tape&, auto& v) { return relu(v[0]); }},
      {"log", {rt({5, 5}, 0.2f, 2.0f)}, [](Tape&, auto& v) { return log(v[0]); }},
      {"sum", {rt({5, 5})}, [](Tape&, auto& v) { return sum(v[0]); }},
      {"mean", {rt({5, 5})}, [](Tape&, auto& v) { return mean(v[0]); }},
      {"softmax_channels", {rt({4, 4, 3})}, [](Tape&, auto& v) { return softmax_channels(v[0]); }},
      {"log_softmax_channels", {rt({4, 4, 3})}, [](Tape&, auto& v) { return log_softmax_channels(v[0]); }},
      {"select_channel", {rt({6, 6, 3})}, [&labels](Tape&, auto& v) { return select_channel(v[0], labels); }},
      {"concat_channels", {rt({4, 4, 2}), rt({4, 4, 3})},
       [](Tape&, auto& v) { return concat_channels(v[0], v[1]); }},
      {"upsample2x_nearest", {rt({3, 4, 2})}, [](Tape&, auto& v) { return upsample2x_nearest(v[0]); }},
      {"downsample2x_avg", {rt({6, 8, 2})}, [](Tape&, auto& v) { return downsample2x_avg(v[0]); }},
      {"lora_delta", {rt({2, 9}), rt({7, 2})}, [](Tape&, auto& v) { return lora_delta(v[0], v[1], 2.0f); }},
      {"weighted_ce", {rt({6, 6, 3}, -3.0f, 3.0f)}, [&pl](Tape&, auto& v) { return weighted_ce(v[0], pl); },
       [&pl](const auto& x) { return oracle::weighted_ce(x[0], pl.labels.labels, pl.weights); }},
      {"supervised_ce", {rt({6, 6, 3}, -3.0f, 3.0f)},
       [&pl](Tape&, auto& v) { return supervised_ce(v[0], pl.labels); },
       [&pl, &ones](const auto& x) { return oracle::weighted_ce(x[0], pl.labels.labels, ones); }},
      {"kl_fusion_loss", {rt({6, 6, 3}, -3.0f, 3.0f)},
       [&server](Tape&, auto& v) { return kl_fusion_loss(v[0], server); },
       [&server](const auto& x) { return kl_to_logits(server.probs, x[0]); }},
  };

  double worst = 0.0;
  std::string worst_name;
  std::size_t failing = 0;
  std::string summary;
  for (const auto& c : cases) {
    const GradResult r = check_op(c.inputs, c.op, c.reference, rng, eps, 40);
    const bool ok = r.checked >= 20 && r.max_rel < 1e-2;
    failing += !ok;
    if (!ok) summary += " " + c.name + fmt("(%.2e over %zu)", r.max_rel, r.checked);
    if (r.max_rel >= worst) {
      worst = r.max_rel;
      worst_name = c.name;
    }
  }

  // The client objective end to end: network forward, fused pseudo-labels,
  // confidence-weighted cross-entropy averaged over a batch of two images.
  const SegNet net({4, 2, 2, 16, 16});
  const ModelParams params = net.init(7);
  const ModelParams other = net.init(8);
  auto images = generate_synthetic(2, 16, Style::Blob, 0.1f, 3);
  std::vector<PseudoLabelSet> pseudo;
  for (const auto& s : images) {
    pseudo.push_back(fuse(net.predict(other, s.image, Source::Teacher), net.predict(params, s.image)));
  }
  std::vector<Tensor> inputs;
  for (const auto& e : params.entries) inputs.push_back(e.tensor);
  // The network path is checked coordinate by coordinate against the
  // double-precision loss oracle applied to the network logits.
  Tape tape;
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(tape.variable(x));
  BatchU batch;
  for (std::size_t i = 0; i < images.size(); ++i) batch.push_back({net.forward(tape, vars, images[i].image), &pseudo[i]});
  tape.backward(batch_unsup_loss(batch));
  auto oracle_loss = [&](const std::vector<Tensor>& xs) {
    ModelParams p = params;
    for (std::size_t e = 0; e < xs.size(); ++e) p.entries[e].tensor = xs[e];
    double total = 0.0;
    for (std::size_t i = 0; i < images.size(); ++i) {
      total += oracle::weighted_ce(net.logits(p, images[i].image), pseudo[i].labels.labels, pseudo[i].weights);
    }
    return total / static_cast<double>(images.size());
  };
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t e = 0; e < inputs.size(); ++e)
    for (std::size_t k = 0; k < inputs[e].numel(); ++k) coords.emplace_back(e, k);
  std::shuffle(coords.begin(), coords.end(), rng);
  // A coordinate whose perturbation moves some ReLU input across zero has no
  // derivative to approximate there. Such coordinates show up as one-sided
  // differences that disagree with each other, and are skipped until 40
  // smooth coordinates have been compared.
  const double base_loss = oracle_loss(inputs);
  double client_worst = 0.0;
  std::size_t compared = 0, kinked = 0;
  for (const auto& [e, k] : coords) {
    if (compared == 40) break;
    auto plus = inputs, minus = inputs;
    plus[e][k] += static_cast<float>(eps);
    minus[e][k] -= static_cast<float>(eps);
    const double up = oracle_loss(plus), down = oracle_loss(minus);
    const double right = (up - base_loss) / (static_cast<double>(plus[e][k]) - inputs[e][k]);
    const double left = (base_loss - down) / (static_cast<double>(inputs[e][k]) - minus[e][k]);
    if (std::abs(right - left) > 1e-2 * std::max({std::abs(right), std::abs(left), 1e-6})) {
      ++kinked;
      continue;
    }
    const double numeric = (up - down) / (static_cast<double>(plus[e][k]) - static_cast<double>(minus[e][k]));
    const double a = tape.gradient(vars[e])[k];
    client_worst = std::max(client_worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6}));
    ++compared;
  }
  const bool client_ok = compared >= 20 && client_worst < 1e-2;
  const double secs = clock.seconds();
  return {failing == 0 && client_ok && secs < 30.0,
          fmt("%zu ops, worst op %s at %.2e; client loss max rel err %.2e over %zu params (%zu kink coordinates "
              "skipped); %.1fs%s",
              cases.size(), worst_name.c_str(), worst, client_worst, compared, kinked, secs,
              failing ? (", failing:" + summary).c_str() : "")};
}

// ---- 3. aggregation algebra -----------------------------------------------

ModelParams vector_params(std::vector<float> v) {
  ModelParams p;
  const std::size_t n = v.size();
  p.entries.push_back({"theta", Tensor({n}, std::move(v))});
  p.fingerprint = 1;
  return p;
}

Verdict aggregation_algebra() {
  std::mt19937_64 rng(303);
  std::vector<std::string> broken;

  {
    const ModelParams m[] = {vector_params({1.0f}), vector_params({3.0f})};
    const double w[] = {1.0, 3.0};
    if (fedavg(m, w).entries[0].tensor[0] != 2.5f) broken.push_back("weighted mean");
  }
  {
    const ModelParams p = SegNet({4, 2, 2, 64, 64}).init(4);
    const ModelParams m[] = {p, p, p, p};
    const double w[] = {10, 20, 40, 60};
    if (!bitwise_equal(fedavg(m, w), p)) broken.push_back("idempotence");
  }
  {
    auto ints = [&] {
      std::vector<float> v(32);
      for (auto& x : v) x = static_cast<float>(static_cast<int>(rng() % 33) - 16);
      return vector_params(v);
    };
    auto combo = [](const ModelParams& a, const ModelParams& b) {
      ModelParams out = a;
      for (std::size_t j = 0; j < a.entries[0].tensor.numel(); ++j) {
        out.entries[0].tensor[j] = 2.0f * a.entries[0].tensor[j] + 3.0f * b.entries[0].tensor[j];
      }
      return out;
    };
    const ModelParams t[] = {ints(), ints(), ints(), ints()}, f[] = {ints(), ints(), ints(), ints()};
    const ModelParams mixed[] = {combo(t[0], f[0]), combo(t[1], f[1]), combo(t[2], f[2]), combo(t[3], f[3])};
    const double w[] = {1, 1, 2, 4};
    if (!bitwise_equal(fedavg(mixed, w), combo(fedavg(t, w), fedavg(f, w)))) broken.push_back("linearity");
  }
  {
    ExperimentConfig cfg = scenario(Mode::Homogeneous);
    cfg.image_size = 16;
    cfg.partition.public_count = 6;
    cfg.partition.client_counts = {6, 6, 6};
    cfg.clients.resize(3);
    cfg.foundation_count = 6;
    cfg.foundation_epochs = cfg.teacher_epochs = cfg.pretrain_epochs = 1;
    cfg.rounds = 1;
    cfg.sync_shapes();
    Federation fed = initialize(cfg, prepare_data(cfg));
    run_rounds(fed, cfg);
    for (const auto& c : fed.clients)
      if (!bitwise_equal(c.params, fed.server.global)) broken.push_back("post-aggregation identity");
  }

  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t clients = 2 + trial % 3, n = 2 + trial % 2;
    Dataset pub;
    std::vector<std::vector<ProbMap>> maps(clients);
    for (std::size_t i = 0; i < 3; ++i) {
      Sample s{Image(8, 8), Mask(8, 8), Style::Blob};
      for (auto& l : s.mask.labels) l = static_cast<std::uint8_t>(rng() % n);
      pub.push_back(s);
      for (auto& m : maps) m.push_back(oracle::random_prob_map(rng, 8, 8, n));
    }
    for (const auto& soft : condense(maps, pub)) worst = std::max(worst, max_distribution_error(soft));
  }
  if (!(worst <= 1e-6)) broken.push_back("soft-label validity");

  std::string detail = "weighted mean 2.5, idempotence, linearity, post-aggregation identity exact; 100 RC cases max "
                       "|sum-1| " +
                       fmt("%.2e", worst);
  if (!broken.empty()) {
    detail = "broken:";
    for (const auto& b : broken) detail += " " + b;
  }
  return {broken.empty(), detail};
}

// ---- 4 and 5. scenario trends --------------------------------------------

struct ScenarioRun {
  double final_dice = 0.0;
  double first_agreement = 0.0;
  double final_agreement = 0.0;
};

struct ScenarioResults {
  // results[mode][policy][seed]
  std::map<Mode, std::map<PseudoLabelPolicy, std::vector<ScenarioRun>>> runs;
  std::set<fs::path> pgms;
  double seconds = 0.0;
};

ScenarioResults run_scenarios(const fs::path& out) {
  Stopwatch clock;
  ScenarioResults res;
  const ModelParams foundation = pretrain_foundation(scenario(Mode::Homogeneous));
  for (Mode mode : {Mode::Homogeneous, Mode::Heterogeneous}) {
    for (std::uint64_t seed : {0, 1, 2}) {
      ExperimentConfig cfg = scenario(mode);
      cfg.seed = seed;
      const Partition data = prepare_data(cfg);
      const Federation start = initialize(cfg, data, &foundation);
      for (auto policy : {PseudoLabelPolicy::Agreement, PseudoLabelPolicy::ClientOnly, PseudoLabelPolicy::TeacherOnly}) {
        cfg.policy = policy;
        Federation fed = start;
        const std::set<std::size_t> snapshot_rounds{1, (cfg.rounds + 1) / 2, cfg.rounds};
        const auto reports = run_rounds(fed, cfg, [&](const RoundReport& r) {
          if (policy != PseudoLabelPolicy::Agreement || !snapshot_rounds.contains(r.round)) return;
          const fs::path dir = out / "agreement" / std::string(to_string(mode)) / ("seed" + std::to_string(seed));
          fs::create_directories(dir);
          for (std::size_t k = 0; k < r.clients.size(); ++k) {
            const fs::path file = dir / ("round" + std::to_string(r.round) + "_client" + std::to_string(k + 1) + ".pgm");
            export_agreement_image(r.clients[k].sample, file);
            res.pgms.insert(file);
          }
        });
        res.runs[mode][policy].push_back(
            {reports.back().mean_dice(), reports.front().mean_agreement(), reports.back().mean_agreement()});
        std::fprintf(stderr, "  %s seed %llu %-12s final dice %.4f agreement %.4f -> %.4f (%.0fs)\n",
                     std::string(to_string(mode)).c_str(), static_cast<unsigned long long>(seed),
                     std::string(to_string(policy)).c_str(), reports.back().mean_dice(),
                     reports.front().mean_agreement(), reports.back().mean_agreement(), clock.seconds());
      }
    }
  }
  res.seconds = clock.seconds();
  return res;
}

double mean_final(const std::vector<ScenarioRun>& runs) {
  double s = 0.0;
  for (const auto& r : runs) s += r.final_dice;
  return s / static_cast<double>(runs.size());
}

Verdict paper_trend(const ScenarioResults& res) {
  bool pass = res.seconds < 15 * 60;
  std::string detail;
  for (const auto& [mode, by_policy] : res.runs) {
    const double a = 100 * mean_final(by_policy.at(PseudoLabelPolicy::Agreement));
    const double c = 100 * mean_final(by_policy.at(PseudoLabelPolicy::ClientOnly));
    const double t = 100 * mean_final(by_policy.at(PseudoLabelPolicy::TeacherOnly));
    pass = pass && a - c >= 2.0 && a - t >= 2.0;
    detail += fmt("%s: agreement %.2f, client_only %.2f (%+.2f), teacher_only %.2f (%+.2f); ",
                  std::string(to_string(mode)).c_str(), a, c, a - c, t, a - t);
  }
  return {pass, detail + fmt("needs +2.00 over both, %.0fs", res.seconds)};
}

Verdict agreement_trend(const ScenarioResults& res) {
  bool pass = true;
  std::string detail;
  for (const auto& [mode, by_policy] : res.runs) {
    detail += std::string(to_string(mode)) + ":";
    for (const auto& r : by_policy.at(PseudoLabelPolicy::Agreement)) {
      pass = pass && r.final_agreement > r.first_agreement;
      detail += fmt(" %.4f->%.4f", r.first_agreement, r.final_agreement);
    }
    detail += "; ";
  }
  // Early, middle and final snapshots for every client, mode and seed.
  std::size_t missing = 0;
  for (const auto& p : res.pgms) missing += !fs::exists(p);
  const std::size_t expected = 2 * 3 * 3 * 4;
  pass = pass && res.pgms.size() == expected && missing == 0;
  return {pass, detail + fmt("%zu/%zu agreement PGMs written", res.pgms.size() - missing, expected)};
}

// ---- 6. capacity premise ---------------------------------------------------

Verdict capacity_premise() {
  bool pass = true;
  std::string detail;
  for (std::uint64_t seed : {0, 1, 2}) {
    ExperimentConfig cfg = scenario(Mode::Homogeneous);
    cfg.seed = seed;
    const Partition data = prepare_data(cfg);
    Dataset val;
    for (const auto& c : data.clients) val.insert(val.end(), c.val.begin(), c.val.end());
    auto score = [&](const SegNetConfig& arch) {
      const SegNet net(arch);
      const TrainOptions opts{cfg.pretrain_epochs, cfg.batch_size, cfg.optimizer, derive_seed(seed, {0xcafe})};
      const auto trained = train_supervised(net, net.init(derive_seed(seed, {0xbeef})), data.public_set, opts);
      return evaluate_model(net, trained.params, val).dice;
    };
    const double teacher = score(cfg.teacher), client = score(cfg.clients.front());
    pass = pass && teacher >= client;
    detail += fmt("seed %llu teacher %.4f client %.4f; ", static_cast<unsigned long long>(seed), teacher, client);
  }
  return {pass, detail + "base 16 vs base 4, same public-set training"};
}

// ---- 7. LoRA contract -------------------------------------------------------

Verdict lora_contract() {
  const ExperimentConfig cfg = scenario(Mode::Homogeneous);
  const SegNet net(cfg.teacher);
  const ModelParams base = net.init(11);
  const LoraModel model(net, base, make_lora(net, cfg.lora, 12));
  auto images = generate_synthetic(3, cfg.image_size, Style::Ring, 0.1f, 13);

  bool identical = true;
  bool base_frozen = true;
  double adapter_grad = 0.0;
  for (const auto& s : images) {
    Tape tape;
    std::vector<Var> vars;
    LoraModel m = model;
    for (auto* t : m.trainable()) vars.push_back(tape.variable(*t));
    std::vector<Var> base_vars;
    Var logits = m.forward(tape, vars, s.image, nullptr, &base_vars);
    identical = identical && bitwise_equal(logits.value(), net.logits(base, s.image));
    tape.backward(supervised_ce(logits, s.mask));
    for (const auto& b : base_vars) {
      const Tensor g = tape.gradient(b);
      for (float x : g.data()) base_frozen = base_frozen && x == 0.0f;
    }
    for (const auto& v : vars) {
      const Tensor g = tape.gradient(v);
      for (float x : g.data()) adapter_grad += std::abs(x);
    }
  }

  bool accepted = true;
  try {
    std::istringstream in("lora_rank = 16\nlora_alpha = 32\nlora_dropout = 0.1\n");
    const ExperimentConfig big = parse_config(in);
    accepted = big.lora.rank == 16 && big.lora.alpha == 32.0f;
  } catch (const Error&) {
    accepted = false;
  }
  return {identical && base_frozen && adapter_grad > 0.0 && accepted,
          fmt("zero-B forward bitwise equal: %s; base grads all zero: %s; adapter grad mass %.3e; r=16 a=32 "
              "dropout=0.1 accepted: %s",
              identical ? "yes" : "no", base_frozen ? "yes" : "no", adapter_grad, accepted ? "yes" : "no")};
}

// ---- 8. metric oracles ------------------------------------------------------

Verdict metric_oracles() {
  std::mt19937_64 rng(808);
  std::size_t dice_mismatch = 0;
  double hd_err = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    Mask a(16, 16), b(16, 16);
    const double pa = 0.1 + 0.4 * (trial % 5) / 4.0;
    std::bernoulli_distribution fa(pa), fb(0.3);
    for (auto& l : a.labels) l = fa(rng);
    for (auto& l : b.labels) l = fb(rng);
    dice_mismatch += dice(a, b) != oracle::dice(a, b, 1);
    hd_err = std::max(hd_err, std::abs(hd95(a, b) - oracle::hd95(a, b, 1)));
  }
  Mask g(8, 8), disjoint(8, 8), half(8, 8);
  for (std::size_t i = 0; i < 4; ++i) g.labels[i] = 1;
  for (std::size_t i = 8; i < 12; ++i) disjoint.labels[i] = 1;
  half.labels[2] = half.labels[3] = half.labels[8] = half.labels[9] = 1;
  Mask p1(8, 8), p2(8, 8);
  p1.at(1, 1) = 1;
  p2.at(4, 5) = 1;
  const bool analytic = dice(g, g) == 1.0 && dice(g, disjoint) == 0.0 && dice(g, half) == 0.5 && hd95(g, g) == 0.0 &&
                        hd95(p1, p2) == 5.0;
  return {dice_mismatch == 0 && hd_err <= 1e-9 && analytic,
          fmt("200 pairs: dice mismatches %zu, max hd95 err %.2e; analytic examples %s", dice_mismatch, hd_err,
              analytic ? "exact" : "WRONG")};
}

// ---- 9. determinism -----------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Verdict determinism(const fs::path& out) {
  // A shortened heterogeneous scenario so both aggregation phases run in
  // parallel.
  ExperimentConfig cfg = scenario(Mode::Heterogeneous);
  cfg.rounds = 3;
  cfg.foundation_epochs = 5;
  cfg.pretrain_epochs = 10;
  cfg.teacher_epochs = 5;
  const fs::path dir = out / "determinism";
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "run.cfg");
    f << format_config(cfg);
  }
  auto run = [&](std::size_t threads) {
    const fs::path target = dir / ("threads" + std::to_string(threads));
    fs::remove_all(target);
    const std::string cmd = std::string(SAMFED_BIN) + " run --config " + (dir / "run.cfg").string() + " --threads " +
                            std::to_string(threads) + " --out " + target.string() + " 2>/dev/null";
    const int status = std::system(cmd.c_str());
    return std::make_pair(WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(target / "report.csv"));
  };
  Stopwatch clock;
  const auto [code1, csv1] = run(1);
  const auto [code4, csv4] = run(4);
  const bool pass = code1 == 0 && code4 == 0 && !csv1.empty() && csv1 == csv4;
  return {pass, fmt("exit codes %d/%d, report.csv %zu bytes, byte-identical: %s (%.0fs)", code1, code4, csv1.size(),
                    csv1 == csv4 ? "yes" : "no", clock.seconds())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string out = "acceptance_out";
  std::vector<int> only;
  app.add_option("--out", out, "directory for artifacts");
  app.add_option("--only", only, "run just these criteria");
  CLI11_PARSE(app, argc, argv);
  auto wanted = [&](int n) { return only.empty() || std::find(only.begin(), only.end(), n) != only.end(); };
  fs::create_directories(out);

  int failures = 0;
  auto report = [&](int n, const char* name, const std::function<Verdict()>& fn) {
    if (!wanted(n)) return;
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failures += !v.pass;
    std::printf("criterion %d %-22s %s  %s\n", n, name, v.pass ? "PASS" : "FAIL", v.detail.c_str());
    std::fflush(stdout);
  };

  report(1, "equation oracles", equation_oracles);
  report(2, "gradient correctness", gradient_correctness);
  report(3, "aggregation algebra", aggregation_algebra);
  std::optional<ScenarioResults> scenarios;
  auto shared = [&]() -> const ScenarioResults& {
    if (!scenarios) scenarios = run_scenarios(out);
    return *scenarios;
  };
  report(4, "trend reproduction", [&] { return paper_trend(shared()); });
  report(5, "agreement trend", [&] { return agreement_trend(shared()); });
  report(6, "capacity premise", capacity_premise);
  report(7, "lora contract", lora_contract);
  report(8, "metric oracles", metric_oracles);
  report(9, "determinism", [&] { return determinism(out); });
  return failures == 0 ? 0 : 1;
}
