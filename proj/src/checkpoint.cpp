#include "samfed/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "samfed/error.hpp"

namespace samfed {

namespace {

constexpr std::array<char, 4> kMagic{'F', 'S', 'E', 'G'};
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

template <typename T>
void put(std::ostream& out, T v) {
  std::array<char, sizeof(T)> bytes;
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff);
  out.write(bytes.data(), bytes.size());
}

template <typename T>
T get(std::istream& in, const char* what) {
  std::array<unsigned char, sizeof(T)> bytes;
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw Error(Errc::IoError, std::string("truncated checkpoint while reading ") + what);
  }
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace

void write_checkpoint(std::ostream& out, const ModelParams& params) {
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, params.fingerprint);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.entries.size()));
  for (const auto& e : params.entries) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.tensor.rank()));
    for (auto d : e.tensor.shape()) put<std::uint64_t>(out, d);
    for (float v : e.tensor.data()) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  if (!out) throw Error(Errc::IoError, "failed to write checkpoint");
}

void write_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot open " + path.string() + " for writing");
  write_checkpoint(out, params);
}

ModelParams read_checkpoint(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw Error(Errc::BadMagic, "bad magic: not a FSEG checkpoint");
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw Error(Errc::IoError, "unsupported checkpoint version " + std::to_string(version));
  }
  ModelParams params;
  params.fingerprint = get<std::uint64_t>(in, "fingerprint");
  const auto count = get<std::uint32_t>(in, "entry count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(in, "name length");
    if (name_len > 4096) throw Error(Errc::IoError, "implausible parameter name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw Error(Errc::IoError, "truncated checkpoint while reading name");
    const auto rank = get<std::uint32_t>(in, "rank");
    if (rank > 8) throw Error(Errc::IoError, "implausible tensor rank in '" + name + "'");
    Shape shape(rank);
    std::uint64_t numel = 1;
    for (auto& d : shape) {
      d = static_cast<std::size_t>(get<std::uint64_t>(in, "dims"));
      numel *= d;
      if (numel > kMaxElements) throw Error(Errc::IoError, "implausible tensor size in '" + name + "'");
    }
    std::vector<float> values(static_cast<std::size_t>(numel));
    for (auto& v : values) v = std::bit_cast<float>(get<std::uint32_t>(in, "payload"));
    params.entries.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  return params;
}

ModelParams read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace samfed
