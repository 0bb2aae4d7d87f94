#pragma once

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "stainkit/file_io.hpp"
#include "stainkit/image.hpp"

namespace stainkit {

// Portable float map: "Pf" (1 channel) or "PF" (3 channels), "W H", scale
// (negative = little-endian), then float32 rows stored bottom-to-top.

struct PfmData {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> values;  // top-to-bottom, row-major, interleaved
};

inline std::vector<std::uint8_t> encode_pfm(int width, int height, int channels, std::span<const double> values) {
  std::string header = std::string(channels == 1 ? "Pf" : "PF") + "\n" + std::to_string(width) + " " +
                       std::to_string(height) + "\n-1.0\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  const std::size_t row = static_cast<std::size_t>(width) * channels;
  bytes.reserve(bytes.size() + values.size() * 4);
  for (int y = height - 1; y >= 0; --y) {
    for (std::size_t i = 0; i < row; ++i) {
      auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(values[y * row + i]));
      for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
    }
  }
  return bytes;
}

inline PfmData decode_pfm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  PfmData out;
  std::string magic = token();
  if (magic == "Pf") out.channels = 1;
  else if (magic == "PF") out.channels = 3;
  else fail(ErrorCode::Decode, "not a PFM stream");
  double scale = 0;
  try {
    out.width = std::stoi(token());
    out.height = std::stoi(token());
    scale = std::stod(token());
  } catch (const std::exception&) {
    fail(ErrorCode::Decode, "malformed PFM header");
  }
  ++pos;  // single whitespace byte before the raster
  if (out.width < 1 || out.height < 1 || scale == 0.0) fail(ErrorCode::Decode, "invalid PFM header values");
  const bool little = scale < 0;
  const std::size_t row = static_cast<std::size_t>(out.width) * out.channels;
  const std::size_t n = row * out.height;
  if (bytes.size() < pos || bytes.size() - pos < n * 4) fail(ErrorCode::Decode, "truncated PFM raster");
  out.values.resize(n);
  for (int y = out.height - 1, r = 0; y >= 0; --y, ++r) {
    for (std::size_t i = 0; i < row; ++i) {
      const std::uint8_t* p = bytes.data() + pos + (r * row + i) * 4;
      std::uint32_t bits = little ? (p[0] | p[1] << 8 | p[2] << 16 | static_cast<std::uint32_t>(p[3]) << 24)
                                  : (p[3] | p[2] << 8 | p[1] << 16 | static_cast<std::uint32_t>(p[0]) << 24);
      out.values[y * row + i] = std::bit_cast<float>(bits);
    }
  }
  return out;
}

template <int C, typename Tag>
void save_pfm(const Image<double, C, Tag>& img, const std::filesystem::path& path) {
  static_assert(C == 1 || C == 3, "PFM holds 1 or 3 channels");
  write_file_atomic(path, encode_pfm(img.width(), img.height(), C, img.data()));
}

template <int C>
Image<double, C> load_pfm(const std::filesystem::path& path) {
  auto pfm = decode_pfm(read_file(path));
  if (pfm.channels != C)
    fail(ErrorCode::Decode, path.string() + ": expected " + std::to_string(C) + "-channel PFM, found " +
                                std::to_string(pfm.channels));
  std::vector<double> values(pfm.values.begin(), pfm.values.end());
  for (double v : values)
    if (!std::isfinite(v)) fail(ErrorCode::Decode, path.string() + ": non-finite value in PFM");
  return Image<double, C>(pfm.height, pfm.width, std::move(values));
}

inline FloatMap load_float_map(const std::filesystem::path& path) { return load_pfm<1>(path); }

}  // namespace stainkit
