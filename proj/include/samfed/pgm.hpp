#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

namespace samfed {

// 8-bit grayscale raster as stored in a binary PGM.
struct GrayImage8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;
  unsigned maxval = 255;
};

// P5 only, maxval 1..255. Header comments are skipped. Throws MalformedPgm
// or IoError.
GrayImage8 read_pgm(std::istream& in);
GrayImage8 read_pgm(const std::filesystem::path& path);

// Writes "P5\n<w> <h>\n<maxval>\n" followed by the raw bytes.
void write_pgm(std::ostream& out, const GrayImage8& img);
void write_pgm(const std::filesystem::path& path, const GrayImage8& img);

}  // namespace samfed
