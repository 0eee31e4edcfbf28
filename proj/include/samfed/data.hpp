#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "samfed/image.hpp"

namespace samfed {

enum class Style : std::uint8_t { Blob = 0, Ring = 1, MultiBlob = 2 };

inline constexpr std::size_t kStyleCount = 3;

std::string_view to_string(Style style) noexcept;
Style parse_style(std::string_view name);

struct Sample {
  Image image;
  Mask mask;
  Style style = Style::Blob;
};

using Dataset = std::vector<Sample>;

// Lesion-like foreground shapes over a smooth background. Masks are the
// exact shape indicator; noise only touches the image. Every mask covers
// between 5% and 60% of the image.
Dataset generate_synthetic(std::size_t n, std::size_t size, Style style, float noise_sd, std::uint64_t seed,
                           std::size_t size_multiple = 4);

// Equal share of each style, interleaved Blob, Ring, MultiBlob, ...
Dataset generate_mixture(std::size_t n, std::size_t size, float noise_sd, std::uint64_t seed,
                         std::size_t size_multiple = 4);

// Grows every non-zero label into background pixels within Euclidean
// distance `radius`. Where two classes compete the lower index wins.
Mask dilate(const Mask& mask, std::size_t radius);

// Rounds every pixel to the nearest multiple of 1/255 so the dataset
// survives a PGM round trip bit-exactly.
void quantize_8bit(Dataset& data);

struct SplitRatio {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct PartitionSpec {
  std::size_t public_count = 20;
  std::vector<std::size_t> client_counts{10, 20, 40, 60};
  // 0 = IID draw for every client, 1 = each client only sees its home style.
  double noniid_skew = 0.5;
  SplitRatio ratio;

  void validate() const;
};

struct ClientSplit {
  Dataset train;
  Dataset val;
  Dataset test;
  // Indices into the partitioned pool, in the same order as the splits.
  std::vector<std::size_t> train_idx, val_idx, test_idx;
};

struct Partition {
  Dataset public_set;
  std::vector<std::size_t> public_idx;
  std::vector<ClientSplit> clients;
};

// Disjoint assignment of `data` to the public set and the client splits.
// Client k's home style is k mod kStyleCount.
Partition partition(const Dataset& data, const PartitionSpec& spec, std::uint64_t seed);

// Pairs img_<k>.pgm / mask_<k>.pgm in ascending k. A missing directory or one
// with no pairs yields an empty dataset.
Dataset load_pgm_dataset(const std::filesystem::path& dir, std::size_t num_classes = 2);

// Writes img_<k>.pgm / mask_<k>.pgm for k = 0..n-1 plus manifest.txt.
void write_pgm_dataset(const std::filesystem::path& dir, const Dataset& data);

}  // namespace samfed
