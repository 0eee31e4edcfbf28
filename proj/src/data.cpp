#include "samfed/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <regex>
#include <sstream>

#include "samfed/error.hpp"
#include "samfed/pgm.hpp"
#include "samfed/rng.hpp"

namespace samfed {

std::string_view to_string(Style style) noexcept {
  switch (style) {
    case Style::Blob: return "blob";
    case Style::Ring: return "ring";
    case Style::MultiBlob: return "multiblob";
  }
  return "blob";
}

Style parse_style(std::string_view name) {
  if (name == "blob") return Style::Blob;
  if (name == "ring") return Style::Ring;
  if (name == "multiblob") return Style::MultiBlob;
  throw Error(Errc::ConfigError, "unknown style '" + std::string(name) + "'");
}

namespace {

struct Ellipse {
  float cx, cy, a, b, cos_t, sin_t;

  // Normalised radius: < 1 inside.
  float radius(float x, float y) const {
    const float dx = x - cx, dy = y - cy;
    const float u = (dx * cos_t + dy * sin_t) / a;
    const float v = (-dx * sin_t + dy * cos_t) / b;
    return std::sqrt(u * u + v * v);
  }
};

// Ellipse of the requested area (in pixels) placed fully inside the image.
Ellipse random_ellipse(Rng& rng, float size, float area) {
  const float aspect = uniform(rng, 0.55f, 1.0f);
  const float a = std::sqrt(area / (std::numbers::pi_v<float> * aspect));
  const float b = aspect * a;
  const float theta = uniform(rng, 0.0f, std::numbers::pi_v<float>);
  const float margin = std::min(a + 1.0f, size / 2.0f);
  return {uniform(rng, margin, size - margin), uniform(rng, margin, size - margin), a, b, std::cos(theta),
          std::sin(theta)};
}

Sample draw_sample(Rng& rng, std::size_t size, Style style, float noise_sd) {
  const float s = static_cast<float>(size);
  const float total = s * s;
  std::vector<Ellipse> shapes;
  float hole = 0.0f;
  switch (style) {
    case Style::Blob:
      shapes.push_back(random_ellipse(rng, s, uniform(rng, 0.07f, 0.35f) * total));
      break;
    case Style::Ring:
      shapes.push_back(random_ellipse(rng, s, uniform(rng, 0.14f, 0.45f) * total));
      hole = uniform(rng, 0.5f, 0.7f);
      break;
    case Style::MultiBlob: {
      const int count = 2 + static_cast<int>(rng() % 2);
      for (int i = 0; i < count; ++i) shapes.push_back(random_ellipse(rng, s, uniform(rng, 0.03f, 0.12f) * total));
      break;
    }
  }

  const float base = uniform(rng, 0.2f, 0.4f);
  const float gx = uniform(rng, -0.1f, 0.1f), gy = uniform(rng, -0.1f, 0.1f);
  const float contrast = uniform(rng, 0.2f, 0.4f);

  Sample out{Image(size, size), Mask(size, size), style};
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const float px = static_cast<float>(x) + 0.5f, py = static_cast<float>(y) + 0.5f;
      float inside = 0.0f;
      for (const auto& e : shapes) {
        const float r = e.radius(px, py);
        if (r < 1.0f && r >= hole) inside = std::max(inside, 1.0f - 0.5f * r);
      }
      const float bg = base + gx * (px / s - 0.5f) + gy * (py / s - 0.5f);
      out.mask.at(y, x) = inside > 0.0f ? 1 : 0;
      out.image.at(y, x) = bg + contrast * inside;
    }
  }
  if (noise_sd > 0.0f) {
    for (auto& v : out.image.pixels) v += normal(rng, noise_sd);
  }
  for (auto& v : out.image.pixels) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

double foreground_fraction(const Mask& m) {
  return static_cast<double>(std::count_if(m.labels.begin(), m.labels.end(), [](auto l) { return l != 0; })) /
         static_cast<double>(m.size());
}

}  // namespace

Dataset generate_synthetic(std::size_t n, std::size_t size, Style style, float noise_sd, std::uint64_t seed,
                           std::size_t size_multiple) {
  if (size < 8 || size_multiple == 0 || size % size_multiple != 0) {
    throw Error(Errc::InvalidSize,
                "image size " + std::to_string(size) + " must be >= 8 and divisible by " + std::to_string(size_multiple));
  }
  if (!(noise_sd >= 0.0f)) throw Error(Errc::InvalidConfig, "noise_sd must be non-negative");
  Dataset out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = make_rng(seed, {static_cast<std::uint64_t>(style), i});
    Sample s = draw_sample(rng, size, style, noise_sd);
    // Redraw until the mask covers 5%..60% of the image.
    while (true) {
      const double f = foreground_fraction(s.mask);
      if (f >= 0.05 && f <= 0.6) break;
      s = draw_sample(rng, size, style, noise_sd);
    }
    out.push_back(std::move(s));
  }
  return out;
}

Dataset generate_mixture(std::size_t n, std::size_t size, float noise_sd, std::uint64_t seed,
                         std::size_t size_multiple) {
  std::array<Dataset, kStyleCount> per_style;
  for (std::size_t s = 0; s < kStyleCount; ++s) {
    const std::size_t count = n / kStyleCount + (s < n % kStyleCount ? 1 : 0);
    per_style[s] = generate_synthetic(count, size, static_cast<Style>(s), noise_sd, seed, size_multiple);
  }
  Dataset out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(std::move(per_style[i % kStyleCount][i / kStyleCount]));
  return out;
}

Mask dilate(const Mask& mask, std::size_t radius) {
  Mask out = mask;
  const long r = static_cast<long>(radius);
  const long h = static_cast<long>(mask.height), w = static_cast<long>(mask.width);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      if (mask.labels[static_cast<std::size_t>(y * w + x)] != 0) continue;
      std::uint8_t best = 0;
      for (long dy = -r; dy <= r; ++dy) {
        for (long dx = -r; dx <= r; ++dx) {
          const long yy = y + dy, xx = x + dx;
          if (dy * dy + dx * dx > r * r || yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
          const std::uint8_t l = mask.labels[static_cast<std::size_t>(yy * w + xx)];
          if (l != 0 && (best == 0 || l < best)) best = l;
        }
      }
      out.labels[static_cast<std::size_t>(y * w + x)] = best;
    }
  }
  return out;
}

void quantize_8bit(Dataset& data) {
  for (auto& s : data)
    for (auto& v : s.image.pixels) v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
}

void PartitionSpec::validate() const {
  if (public_count == 0) throw Error(Errc::ConfigError, "public_count must be >= 1");
  if (client_counts.empty()) throw Error(Errc::ConfigError, "at least one client is required");
  for (auto c : client_counts)
    if (c == 0) throw Error(Errc::ConfigError, "client counts must be >= 1");
  if (!(noniid_skew >= 0.0 && noniid_skew <= 1.0)) throw Error(Errc::ConfigError, "noniid_skew must be in [0, 1]");
  if (ratio.train < 0 || ratio.val < 0 || ratio.test < 0 ||
      std::abs(ratio.train + ratio.val + ratio.test - 1.0) > 1e-9) {
    throw Error(Errc::ConfigError, "split ratios must be non-negative and sum to 1");
  }
}

Partition partition(const Dataset& data, const PartitionSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::size_t needed = spec.public_count;
  for (auto c : spec.client_counts) needed += c;
  if (needed > data.size()) {
    throw Error(Errc::InsufficientData,
                "partition needs " + std::to_string(needed) + " samples, have " + std::to_string(data.size()));
  }
  Rng rng = make_rng(seed, {0x9a27ULL});
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::shuffle(all.begin(), all.end(), rng);

  Partition out;
  out.public_idx.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(spec.public_count));
  std::array<std::vector<std::size_t>, kStyleCount> pools;
  for (std::size_t i = spec.public_count; i < all.size(); ++i) {
    pools[static_cast<std::size_t>(data[all[i]].style)].push_back(all[i]);
  }
  auto take_from = [&](std::size_t s) {
    const std::size_t idx = pools[s].back();
    pools[s].pop_back();
    return idx;
  };
  auto take_any = [&] {
    std::size_t remaining = 0;
    for (const auto& p : pools) remaining += p.size();
    std::size_t r = static_cast<std::size_t>(rng() % remaining);
    for (std::size_t s = 0; s < kStyleCount; ++s) {
      if (r < pools[s].size()) {
        const std::size_t idx = pools[s][r];
        pools[s].erase(pools[s].begin() + static_cast<std::ptrdiff_t>(r));
        return idx;
      }
      r -= pools[s].size();
    }
    throw Error(Errc::InsufficientData, "sample pool exhausted");
  };

  for (std::size_t k = 0; k < spec.client_counts.size(); ++k) {
    const std::size_t home = k % kStyleCount;
    std::vector<std::size_t> assigned;
    for (std::size_t j = 0; j < spec.client_counts[k]; ++j) {
      const bool skewed = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < spec.noniid_skew;
      assigned.push_back(skewed && !pools[home].empty() ? take_from(home) : take_any());
    }
    const std::size_t n = assigned.size();
    const auto n_test = static_cast<std::size_t>(std::llround(spec.ratio.test * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::llround(spec.ratio.val * static_cast<double>(n)));
    const std::size_t n_eval = std::min(n - 1, n_test + n_val);
    const std::size_t n_train = n - n_eval;
    ClientSplit split;
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t idx = assigned[j];
      if (j < n_train) {
        split.train_idx.push_back(idx);
        split.train.push_back(data[idx]);
      } else if (j < n_train + std::min(n_val, n_eval)) {
        split.val_idx.push_back(idx);
        split.val.push_back(data[idx]);
      } else {
        split.test_idx.push_back(idx);
        split.test.push_back(data[idx]);
      }
    }
    out.clients.push_back(std::move(split));
  }
  for (auto i : out.public_idx) out.public_set.push_back(data[i]);
  return out;
}

Dataset load_pgm_dataset(const std::filesystem::path& dir, std::size_t num_classes) {
  namespace fs = std::filesystem;
  Dataset out;
  if (!fs::is_directory(dir)) return out;
  static const std::regex pattern(R"((img|mask)_(\d+)\.pgm)");
  std::map<std::uint64_t, std::pair<bool, bool>> keys;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (!std::regex_match(name, m, pattern)) continue;
    auto& slot = keys[std::stoull(m[2].str())];
    (m[1].str() == "img" ? slot.first : slot.second) = true;
  }
  std::map<std::uint64_t, Style> styles;
  if (std::ifstream manifest(dir / "manifest.txt"); manifest) {
    std::string line;
    while (std::getline(manifest, line)) {
      std::istringstream ls(line);
      std::string img, mask, style;
      std::smatch m;
      if (ls >> img >> mask >> style && std::regex_match(img, m, pattern)) {
        try {
          styles[std::stoull(m[2].str())] = parse_style(style);
        } catch (const Error&) {
        }
      }
    }
  }
  for (const auto& [k, present] : keys) {
    if (!present.first || !present.second) {
      throw Error(Errc::MissingPair, "sample " + std::to_string(k) + " lacks its " +
                                         (present.first ? "mask" : "image") + " in " + dir.string());
    }
    const auto img = read_pgm(dir / ("img_" + std::to_string(k) + ".pgm"));
    const auto mask = read_pgm(dir / ("mask_" + std::to_string(k) + ".pgm"));
    if (img.width != mask.width || img.height != mask.height) {
      throw Error(Errc::MalformedPgm, "image and mask " + std::to_string(k) + " differ in size");
    }
    Sample s{Image(img.height, img.width), Mask(img.height, img.width), Style::Blob};
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
      s.image.pixels[i] = static_cast<float>(img.pixels[i]) / static_cast<float>(img.maxval);
    }
    s.mask.labels = mask.pixels;
    try {
      validate_mask(s.mask, num_classes);
    } catch (const Error& e) {
      throw Error(Errc::LabelOutOfRange, "mask_" + std::to_string(k) + ".pgm: " + e.detail());
    }
    if (auto it = styles.find(k); it != styles.end()) s.style = it->second;
    out.push_back(std::move(s));
  }
  return out;
}

void write_pgm_dataset(const std::filesystem::path& dir, const Dataset& data) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(Errc::IoError, "cannot create " + dir.string() + ": " + ec.message());
  std::ostringstream manifest;
  for (std::size_t k = 0; k < data.size(); ++k) {
    const auto& s = data[k];
    GrayImage8 img{s.image.width, s.image.height, std::vector<std::uint8_t>(s.image.pixels.size())};
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
      img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(s.image.pixels[i], 0.0f, 1.0f) * 255.0f));
    }
    const std::string img_name = "img_" + std::to_string(k) + ".pgm";
    const std::string mask_name = "mask_" + std::to_string(k) + ".pgm";
    write_pgm(dir / img_name, img);
    write_pgm(dir / mask_name, GrayImage8{s.mask.width, s.mask.height, s.mask.labels});
    manifest << img_name << ' ' << mask_name << ' ' << to_string(s.style) << '\n';
  }
  std::ofstream out(dir / "manifest.txt", std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write manifest in " + dir.string());
  out << manifest.str();
}

}  // namespace samfed
