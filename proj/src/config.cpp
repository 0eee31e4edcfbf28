#include "samfed/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "samfed/error.hpp"

namespace samfed {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  while (true) {
    const auto comma = s.find(',');
    out.push_back(trim(s.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw Error(Errc::ConfigError,
              "invalid value '" + std::string(value) + "' for " + std::string(key) + " (expected " + std::string(expected) + ")");
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size()) {
    bad_value(key, text, std::is_integral_v<T> ? "a non-negative integer" : "a number");
  }
  return v;
}

template <typename T>
std::vector<T> parse_numbers(std::string_view key, std::string_view text) {
  std::vector<T> out;
  for (auto item : split_list(text)) out.push_back(parse_number<T>(key, item));
  return out;
}

// A single value applies to every client.
void set_client_field(ExperimentConfig& cfg, std::string_view key, std::string_view value,
                      std::size_t SegNetConfig::*field) {
  const auto values = parse_numbers<std::size_t>(key, value);
  if (values.size() == 1) {
    for (auto& c : cfg.clients) c.*field = values[0];
    return;
  }
  if (values.size() != cfg.clients.size()) {
    cfg.clients.resize(values.size(), cfg.clients.empty() ? SegNetConfig{} : cfg.clients.back());
  }
  for (std::size_t k = 0; k < values.size(); ++k) cfg.clients[k].*field = values[k];
}

using Setter = std::function<void(ExperimentConfig&, std::string_view key, std::string_view value)>;

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = [] {
    std::map<std::string, Setter, std::less<>> t;
    auto size_field = [&](const char* name, auto member) {
      t[name] = [member](ExperimentConfig& c, std::string_view k, std::string_view v) {
        c.*member = parse_number<std::size_t>(k, v);
      };
    };
    auto net_field = [&](const char* name, SegNetConfig ExperimentConfig::*net, std::size_t SegNetConfig::*field) {
      t[name] = [net, field](ExperimentConfig& c, std::string_view k, std::string_view v) {
        (c.*net).*field = parse_number<std::size_t>(k, v);
      };
    };
    auto float_field = [&](const char* name, auto getter) {
      t[name] = [getter](ExperimentConfig& c, std::string_view k, std::string_view v) {
        getter(c) = parse_number<float>(k, v);
      };
    };

    t["mode"] = [](ExperimentConfig& c, std::string_view, std::string_view v) { c.mode = parse_mode(v); };
    t["policy"] = [](ExperimentConfig& c, std::string_view, std::string_view v) { c.policy = parse_policy(v); };
    size_field("rounds", &ExperimentConfig::rounds);
    t["seed"] = [](ExperimentConfig& c, std::string_view k, std::string_view v) {
      c.seed = parse_number<std::uint64_t>(k, v);
    };
    size_field("threads", &ExperimentConfig::threads);
    size_field("image_size", &ExperimentConfig::image_size);
    size_field("num_classes", &ExperimentConfig::num_classes);
    float_field("noise_sd", [](ExperimentConfig& c) -> float& { return c.noise_sd; });
    t["data_dir"] = [](ExperimentConfig& c, std::string_view, std::string_view v) { c.data_dir = std::string(v); };
    size_field("dataset_size", &ExperimentConfig::dataset_size);
    t["public_count"] = [](ExperimentConfig& c, std::string_view k, std::string_view v) {
      c.partition.public_count = parse_number<std::size_t>(k, v);
    };
    t["client_counts"] = [](ExperimentConfig& c, std::string_view k, std::string_view v) {
      c.partition.client_counts = parse_numbers<std::size_t>(k, v);
      c.clients.resize(c.partition.client_counts.size(), c.clients.empty() ? SegNetConfig{} : c.clients.back());
    };
    t["noniid_skew"] = [](ExperimentConfig& c, std::string_view k, std::string_view v) {
      c.partition.noniid_skew = parse_number<double>(k, v);
    };
    t["split"] = [](ExperimentConfig& c, std::string_view k, std::string_view v) {
      const auto r = parse_numbers<double>(k, v);
      if (r.size() != 3) bad_value(k, v, "three ratios train,val,test");
      c.partition.ratio = {r[0], r[1], r[2]};
    };
    t["client_base_channels"] = [](ExperimentConfig& c, std::string_view k, std::string_view v) {
      set_client_field(c, k, v, &SegNetConfig::base_channels);
    };
    t["client_depth"] = [](ExperimentConfig& c, std::string_view k, std::string_view v) {
      set_client_field(c, k, v, &SegNetConfig::depth);
    };
    net_field("global_base_channels", &ExperimentConfig::global, &SegNetConfig::base_channels);
    net_field("global_depth", &ExperimentConfig::global, &SegNetConfig::depth);
    net_field("teacher_base_channels", &ExperimentConfig::teacher, &SegNetConfig::base_channels);
    net_field("teacher_depth", &ExperimentConfig::teacher, &SegNetConfig::depth);
    t["lora_targets"] = [](ExperimentConfig& c, std::string_view, std::string_view v) {
      c.lora.targets.clear();
      for (auto item : split_list(v)) c.lora.targets.emplace_back(item);
    };
    t["lora_rank"] = [](ExperimentConfig& c, std::string_view k, std::string_view v) {
      c.lora.rank = parse_number<std::size_t>(k, v);
    };
    float_field("lora_alpha", [](ExperimentConfig& c) -> float& { return c.lora.alpha; });
    float_field("lora_dropout", [](ExperimentConfig& c) -> float& { return c.lora.dropout; });
    size_field("foundation_count", &ExperimentConfig::foundation_count);
    t["foundation_styles"] = [](ExperimentConfig& c, std::string_view, std::string_view v) {
      c.foundation_styles.clear();
      for (auto item : split_list(v)) c.foundation_styles.push_back(parse_style(item));
    };
    size_field("foundation_epochs", &ExperimentConfig::foundation_epochs);
    size_field("foundation_dilation", &ExperimentConfig::foundation_dilation);
    t["foundation_seed"] = [](ExperimentConfig& c, std::string_view k, std::string_view v) {
      c.foundation_seed = parse_number<std::uint64_t>(k, v);
    };
    size_field("teacher_epochs", &ExperimentConfig::teacher_epochs);
    size_field("pretrain_epochs", &ExperimentConfig::pretrain_epochs);
    size_field("local_epochs", &ExperimentConfig::local_epochs);
    size_field("rf_epochs", &ExperimentConfig::rf_epochs);
    size_field("batch_size", &ExperimentConfig::batch_size);
    t["optimizer"] = [](ExperimentConfig& c, std::string_view k, std::string_view v) {
      if (v == "sgd") {
        c.optimizer.kind = OptimizerKind::Sgd;
      } else if (v == "adamw") {
        c.optimizer.kind = OptimizerKind::AdamW;
      } else {
        bad_value(k, v, "sgd or adamw");
      }
    };
    float_field("lr", [](ExperimentConfig& c) -> float& { return c.optimizer.lr; });
    float_field("weight_decay", [](ExperimentConfig& c) -> float& { return c.optimizer.weight_decay; });
    float_field("local_lr", [](ExperimentConfig& c) -> float& { return c.local_lr; });
    float_field("beta", [](ExperimentConfig& c) -> float& { return c.beta; });
    t["out_dir"] = [](ExperimentConfig& c, std::string_view, std::string_view v) { c.out_dir = std::string(v); };
    return t;
  }();
  return table;
}

}  // namespace

void apply_setting(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
  const auto& table = setters();
  const auto it = table.find(key);
  if (it == table.end()) throw Error(Errc::ConfigError, "unknown config key '" + std::string(key) + "'");
  it->second(cfg, key, value);
}

ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig cfg;
  std::set<std::string, std::less<>> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view text = trim(line);
    if (text.empty() || text.front() == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string_view::npos) {
      throw Error(Errc::ConfigError, "line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string_view key = trim(text.substr(0, eq));
    const std::string_view value = trim(text.substr(eq + 1));
    if (!seen.emplace(key).second) {
      throw Error(Errc::ConfigError, "line " + std::to_string(line_no) + ": duplicate key '" + std::string(key) + "'");
    }
    try {
      apply_setting(cfg, key, value);
    } catch (const Error& e) {
      throw Error(e.code(), "line " + std::to_string(line_no) + ": " + e.detail());
    }
  }
  cfg.sync_shapes();
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::ConfigError, "cannot open config file " + path.string());
  return parse_config(in);
}

std::string format_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  auto list = [](const auto& values, auto fmt) {
    std::string s;
    for (std::size_t i = 0; i < values.size(); ++i) s += (i ? "," : "") + fmt(values[i]);
    return s;
  };
  auto num = [](auto v) {
    std::ostringstream s;
    s.precision(9);
    s << v;
    return s.str();
  };
  out << "mode = " << to_string(cfg.mode) << '\n'
      << "policy = " << to_string(cfg.policy) << '\n'
      << "rounds = " << cfg.rounds << '\n'
      << "seed = " << cfg.seed << '\n'
      << "threads = " << cfg.threads << '\n'
      << "image_size = " << cfg.image_size << '\n'
      << "num_classes = " << cfg.num_classes << '\n'
      << "noise_sd = " << num(cfg.noise_sd) << '\n';
  if (!cfg.data_dir.empty()) out << "data_dir = " << cfg.data_dir << '\n';
  out << "dataset_size = " << cfg.dataset_size << '\n'
      << "public_count = " << cfg.partition.public_count << '\n'
      << "client_counts = " << list(cfg.partition.client_counts, num) << '\n'
      << "noniid_skew = " << num(cfg.partition.noniid_skew) << '\n'
      << "split = " << num(cfg.partition.ratio.train) << ',' << num(cfg.partition.ratio.val) << ','
      << num(cfg.partition.ratio.test) << '\n'
      << "client_base_channels = " << list(cfg.clients, [&](const SegNetConfig& c) { return num(c.base_channels); })
      << '\n'
      << "client_depth = " << list(cfg.clients, [&](const SegNetConfig& c) { return num(c.depth); }) << '\n'
      << "global_base_channels = " << cfg.global.base_channels << '\n'
      << "global_depth = " << cfg.global.depth << '\n'
      << "teacher_base_channels = " << cfg.teacher.base_channels << '\n'
      << "teacher_depth = " << cfg.teacher.depth << '\n'
      << "lora_targets = " << list(cfg.lora.targets, [](const std::string& s) { return s; }) << '\n'
      << "lora_rank = " << cfg.lora.rank << '\n'
      << "lora_alpha = " << num(cfg.lora.alpha) << '\n'
      << "lora_dropout = " << num(cfg.lora.dropout) << '\n'
      << "foundation_count = " << cfg.foundation_count << '\n'
      << "foundation_styles = "
      << list(cfg.foundation_styles, [](Style s) { return std::string(to_string(s)); }) << '\n'
      << "foundation_epochs = " << cfg.foundation_epochs << '\n'
      << "foundation_dilation = " << cfg.foundation_dilation << '\n'
      << "foundation_seed = " << cfg.foundation_seed << '\n'
      << "teacher_epochs = " << cfg.teacher_epochs << '\n'
      << "pretrain_epochs = " << cfg.pretrain_epochs << '\n'
      << "local_epochs = " << cfg.local_epochs << '\n'
      << "rf_epochs = " << cfg.rf_epochs << '\n'
      << "batch_size = " << cfg.batch_size << '\n'
      << "optimizer = " << (cfg.optimizer.kind == OptimizerKind::Sgd ? "sgd" : "adamw") << '\n'
      << "lr = " << num(cfg.optimizer.lr) << '\n'
      << "local_lr = " << num(cfg.local_lr) << '\n'
      << "weight_decay = " << num(cfg.optimizer.weight_decay) << '\n'
      << "beta = " << num(cfg.beta) << '\n'
      << "out_dir = " << cfg.out_dir << '\n';
  return out.str();
}

}  // namespace samfed
