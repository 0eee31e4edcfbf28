#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "samfed/checkpoint.hpp"
#include "samfed/config.hpp"
#include "samfed/error.hpp"
#include "samfed/federation.hpp"

namespace fs = std::filesystem;
using namespace samfed;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct GenerateArgs {
  std::string out;
  std::size_t n = 10;
  std::size_t size = 64;
  std::string style = "mixture";
  std::uint64_t seed = 0;
  float noise = 0.05f;
  std::size_t multiple = 4;
};

struct RunArgs {
  std::string config;
  std::optional<std::size_t> threads;
  std::optional<std::string> out;
};

struct EvalArgs {
  std::vector<std::string> ckpts;
  std::vector<std::string> data;
};

void cmd_generate(const GenerateArgs& a) {
  Dataset data = a.style == "mixture" ? generate_mixture(a.n, a.size, a.noise, a.seed, a.multiple)
                                      : generate_synthetic(a.n, a.size, parse_style(a.style), a.noise, a.seed, a.multiple);
  write_pgm_dataset(a.out, data);
  std::cerr << "wrote " << data.size() << " samples to " << a.out << '\n';
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(Errc::IoError, "cannot create " + dir.string() + ": " + ec.message());
}

void cmd_run(const RunArgs& a) {
  ExperimentConfig cfg = load_config(a.config);
  if (a.threads) cfg.threads = *a.threads;
  if (a.out) cfg.out_dir = *a.out;
  cfg.validate();

  const fs::path out = cfg.out_dir;
  ensure_dir(out / "ckpt");
  ensure_dir(out / "agreement");
  {
    std::ofstream f(out / "config.txt", std::ios::trunc);
    f << format_config(cfg);
  }

  ExperimentResult result = run_experiment(cfg, [&](const RoundReport& r) {
    for (std::size_t k = 0; k < r.clients.size(); ++k) {
      export_agreement_image(r.clients[k].sample,
                             out / "agreement" /
                                 ("round" + std::to_string(r.round) + "_client" + std::to_string(k + 1) + ".pgm"));
    }
    std::fprintf(stderr, "round %zu: dice %.4f hd95 %.3f agreement %.4f\n", r.round, r.mean_dice(), r.mean_hd95(),
                 r.mean_agreement());
  });

  {
    std::ofstream f(out / "report.csv", std::ios::binary | std::ios::trunc);
    if (!f) throw Error(Errc::IoError, "cannot write " + (out / "report.csv").string());
    write_report_csv(f, result.reports);
  }
  const Federation& fed = result.federation;
  write_checkpoint(out / "ckpt" / "teacher.bin", fed.server.teacher);
  write_checkpoint(out / "ckpt" / "global.bin", fed.server.global);
  for (std::size_t k = 0; k < fed.clients.size(); ++k) {
    const std::string name = "client" + std::to_string(k + 1);
    write_checkpoint(out / "ckpt" / (name + ".bin"), fed.clients[k].params);
    write_pgm_dataset(out / "test" / name, fed.clients[k].test);
  }
}

void cmd_eval(const EvalArgs& a) {
  if (a.ckpts.size() != a.data.size()) {
    throw Error(Errc::ConfigError, "give one --data directory per --ckpt");
  }
  std::printf("client,dice,hd95\n");
  MetricResult total;
  for (std::size_t k = 0; k < a.ckpts.size(); ++k) {
    const ModelParams params = read_checkpoint(fs::path(a.ckpts[k]));
    const auto head = params.index_of("head.w");
    if (!head) throw Error(Errc::FingerprintMismatch, a.ckpts[k] + " is not a segmentation checkpoint");
    const std::size_t classes = params.entries[*head].tensor.dim(3);
    const Dataset data = load_pgm_dataset(a.data[k], classes);
    if (data.empty()) throw Error(Errc::EmptyDataset, "no samples in " + a.data[k]);
    const auto cfg = infer_config(params, data.front().image.height, data.front().image.width);
    if (!cfg) {
      throw Error(Errc::FingerprintMismatch,
                  a.ckpts[k] + " does not fit " + std::to_string(data.front().image.height) + "x" +
                      std::to_string(data.front().image.width) + " images");
    }
    const SegNet net(*cfg);
    const MetricResult m = evaluate_model(net, params, data);
    std::printf("C%zu,%.6f,%.6f\n", k + 1, m.dice, m.hd95);
    total.dice += m.dice;
    total.hd95 += m.hd95;
  }
  const double n = static_cast<double>(a.ckpts.size());
  std::printf("mean,%.6f,%.6f\n", total.dice / n, total.hd95 / n);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated semi-supervised segmentation with teacher/client pseudo-label agreement"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "write a synthetic PGM dataset");
  g->add_option("--out", gen.out, "output directory")->required();
  g->add_option("--n", gen.n, "number of samples");
  g->add_option("--size", gen.size, "image side length");
  g->add_option("--style", gen.style, "blob, ring, multiblob or mixture");
  g->add_option("--seed", gen.seed, "random seed");
  g->add_option("--noise", gen.noise, "Gaussian noise standard deviation");
  g->add_option("--multiple", gen.multiple, "the size must be divisible by this");

  RunArgs run;
  auto* r = app.add_subcommand("run", "run a federated experiment");
  r->add_option("--config", run.config, "key = value config file")->required();
  r->add_option("--threads", run.threads, "clients trained in parallel");
  r->add_option("--out", run.out, "output directory (overrides out_dir)");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate checkpoints on PGM datasets");
  e->add_option("--ckpt", ev.ckpts, "checkpoint file (repeatable)")->required();
  e->add_option("--data", ev.data, "dataset directory, one per --ckpt")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (g->parsed()) cmd_generate(gen);
    if (r->parsed()) cmd_run(run);
    if (e->parsed()) cmd_eval(ev);
  } catch (const Error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return is_usage_error(err.code()) ? kExitUsage : kExitRuntime;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}
