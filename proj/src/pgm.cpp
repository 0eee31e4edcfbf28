#include "samfed/pgm.hpp"

#include <cctype>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "samfed/error.hpp"

namespace samfed {

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n' && ch != '\r') {
      }
      continue;
    }
    if (!std::isspace(ch)) break;
  }
  while (ch != EOF && !std::isspace(ch)) {
    if (ch == '#') throw Error(Errc::MalformedPgm, "comment inside header token");
    tok.push_back(static_cast<char>(ch));
    ch = in.get();
  }
  // `ch` is the single whitespace terminating the token (or EOF).
  return tok;
}

std::size_t parse_dim(const std::string& tok, const char* what) {
  if (tok.empty() || tok.find_first_not_of("0123456789") != std::string::npos || tok.size() > 9) {
    throw Error(Errc::MalformedPgm, std::string("bad ") + what + " '" + tok + "'");
  }
  return std::stoul(tok);
}

}  // namespace

GrayImage8 read_pgm(std::istream& in) {
  if (next_token(in) != "P5") throw Error(Errc::MalformedPgm, "missing P5 magic");
  GrayImage8 img;
  img.width = parse_dim(next_token(in), "width");
  img.height = parse_dim(next_token(in), "height");
  const std::size_t maxval = parse_dim(next_token(in), "maxval");
  if (img.width == 0 || img.height == 0) throw Error(Errc::MalformedPgm, "zero image extent");
  if (maxval == 0 || maxval > 255) throw Error(Errc::MalformedPgm, "maxval must be in 1..255");
  img.maxval = static_cast<unsigned>(maxval);
  img.pixels.resize(img.width * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (static_cast<std::size_t>(in.gcount()) != img.pixels.size()) {
    throw Error(Errc::MalformedPgm, "truncated payload");
  }
  for (auto v : img.pixels) {
    if (v > maxval) throw Error(Errc::MalformedPgm, "pixel exceeds maxval");
  }
  return img;
}

GrayImage8 read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open " + path.string());
  try {
    return read_pgm(in);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.detail());
  }
}

void write_pgm(std::ostream& out, const GrayImage8& img) {
  if (img.pixels.size() != img.width * img.height) throw Error(Errc::MalformedPgm, "pixel count mismatch");
  out << "P5\n" << img.width << ' ' << img.height << '\n' << img.maxval << '\n';
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

void write_pgm(const std::filesystem::path& path, const GrayImage8& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  write_pgm(out, img);
  if (!out) throw Error(Errc::IoError, "write failed for " + path.string());
}

}  // namespace samfed
