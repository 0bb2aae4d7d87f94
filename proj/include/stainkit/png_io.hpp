#pragma once

#include <csetjmp>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <png.h>

#include "stainkit/file_io.hpp"
#include "stainkit/image.hpp"

namespace stainkit {

/// Raw decoded PNG samples after palette and low-bit-depth expansion.
struct DecodedPng {
  int width = 0;
  int height = 0;
  int channels = 0;   // 1 gray, 2 gray+alpha, 3 rgb, 4 rgba
  int bit_depth = 0;  // 8 or 16
  std::vector<std::uint16_t> samples;

  bool has_alpha() const noexcept { return channels == 2 || channels == 4; }
  int color_channels() const noexcept { return has_alpha() ? channels - 1 : channels; }
};

namespace detail {

struct PngIoState {
  std::span<const std::uint8_t> input;
  std::size_t pos = 0;
  std::vector<std::uint8_t>* output = nullptr;
  char message[256] = {};
};

inline void png_error_cb(png_structp png, png_const_charp msg) {
  auto* state = static_cast<PngIoState*>(png_get_error_ptr(png));
  std::strncpy(state->message, msg ? msg : "libpng error", sizeof(state->message) - 1);
  std::longjmp(png_jmpbuf(png), 1);
}

inline void png_warning_cb(png_structp, png_const_charp) {}

inline void png_read_cb(png_structp png, png_bytep out, png_size_t n) {
  auto* state = static_cast<PngIoState*>(png_get_io_ptr(png));
  if (state->pos + n > state->input.size()) png_error(png, "unexpected end of PNG data");
  std::memcpy(out, state->input.data() + state->pos, n);
  state->pos += n;
}

inline void png_write_cb(png_structp png, png_bytep data, png_size_t n) {
  auto* state = static_cast<PngIoState*>(png_get_io_ptr(png));
  state->output->insert(state->output->end(), data, data + n);
}

inline void png_flush_cb(png_structp) {}

// Runs inside the setjmp scope of decode_png; every object it touches is owned by the caller.
inline void decode_png_body(png_structp png, png_infop info, DecodedPng& out,
                            std::vector<png_byte>& raw, std::vector<png_bytep>& rows) {
  png_read_info(png, info);
  int color_type = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);

  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  std::size_t rowbytes = png_get_rowbytes(png, info);
  raw.resize(rowbytes * static_cast<std::size_t>(out.height));
  rows.resize(static_cast<std::size_t>(out.height));
  for (int y = 0; y < out.height; ++y) rows[y] = raw.data() + rowbytes * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
}

inline void encode_png_body(png_structp png, png_infop info, int width, int height,
                            int color_type, int bit_depth, std::vector<png_bytep>& rows) {
  png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
}

}  // namespace detail

inline DecodedPng decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0)
    fail(ErrorCode::Decode, "not a PNG stream");

  DecodedPng out;
  std::vector<png_byte> raw;
  std::vector<png_bytep> rows;
  detail::PngIoState state;
  state.input = bytes;

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &state, detail::png_error_cb,
                                           detail::png_warning_cb);
  if (!png) fail(ErrorCode::Decode, "cannot create PNG reader");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(ErrorCode::Decode, "cannot create PNG info");
  }
  png_set_read_fn(png, &state, detail::png_read_cb);

  volatile bool failed = false;
  if (setjmp(png_jmpbuf(png))) {
    failed = true;
  } else {
    detail::decode_png_body(png, info, out, raw, rows);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (failed) fail(ErrorCode::Decode, state.message);

  const std::size_t n = static_cast<std::size_t>(out.width) * out.height * out.channels;
  out.samples.resize(n);
  if (out.bit_depth == 16) {
    for (std::size_t i = 0; i < n; ++i)
      out.samples[i] = static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out.samples[i] = raw[i];
  }
  return out;
}

/// Encodes 8- or 16-bit samples as a PNG stream (gray, gray+alpha, RGB or RGBA).
inline std::vector<std::uint8_t> encode_png(int width, int height, int channels, int bit_depth,
                                            std::span<const std::uint16_t> samples) {
  if (channels < 1 || channels > 4) fail(ErrorCode::InvalidArgument, "PNG encoder supports 1 to 4 channels");
  if (bit_depth != 8 && bit_depth != 16) fail(ErrorCode::InvalidArgument, "PNG encoder supports 8 or 16 bits");
  const std::size_t bps = bit_depth / 8;
  const std::size_t rowbytes = static_cast<std::size_t>(width) * channels * bps;
  std::vector<png_byte> raw(rowbytes * height);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (bps == 2) {
      raw[2 * i] = static_cast<png_byte>(samples[i] >> 8);
      raw[2 * i + 1] = static_cast<png_byte>(samples[i] & 0xff);
    } else {
      raw[i] = static_cast<png_byte>(samples[i]);
    }
  }
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y) rows[y] = raw.data() + rowbytes * y;

  std::vector<std::uint8_t> bytes;
  detail::PngIoState state;
  state.output = &bytes;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &state, detail::png_error_cb,
                                            detail::png_warning_cb);
  if (!png) fail(ErrorCode::Io, "cannot create PNG writer");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(ErrorCode::Io, "cannot create PNG info");
  }
  png_set_write_fn(png, &state, detail::png_write_cb, detail::png_flush_cb);
  constexpr int kColorTypes[] = {PNG_COLOR_TYPE_GRAY, PNG_COLOR_TYPE_GRAY_ALPHA, PNG_COLOR_TYPE_RGB,
                                 PNG_COLOR_TYPE_RGB_ALPHA};
  const int color_type = kColorTypes[channels - 1];

  volatile bool failed = false;
  if (setjmp(png_jmpbuf(png))) {
    failed = true;
  } else {
    detail::encode_png_body(png, info, width, height, color_type, bit_depth, rows);
  }
  png_destroy_write_struct(&png, &info);
  if (failed) fail(ErrorCode::Io, state.message);
  return bytes;
}

/// 8-bit RGB from any 8-bit PNG: gray is replicated, alpha is dropped.
inline RgbImage rgb_from_png(const DecodedPng& png) {
  if (png.bit_depth != 8)
    fail(ErrorCode::UnsupportedBitDepth, std::to_string(png.bit_depth) + "-bit PNG; only 8-bit images are supported");
  RgbImage img(png.height, png.width);
  const std::size_t n = img.pixel_count();
  for (std::size_t p = 0; p < n; ++p) {
    const std::uint16_t* px = png.samples.data() + p * png.channels;
    for (int c = 0; c < 3; ++c)
      img.at_pixel(p, c) = static_cast<std::uint8_t>(png.color_channels() == 1 ? px[0] : px[c]);
  }
  return img;
}

inline RgbImage load_png(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  try {
    return rgb_from_png(decode_png(bytes));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

inline void save_png(const RgbImage& img, const std::filesystem::path& path) {
  std::vector<std::uint16_t> samples(img.data().begin(), img.data().end());
  write_file_atomic(path, encode_png(img.width(), img.height(), 3, 8, samples));
}

/// Object mask: a pixel is set when any colour channel is nonzero.
inline Mask load_mask_png(const std::filesystem::path& path) {
  auto png = decode_png(read_file(path));
  Mask mask(png.height, png.width);
  for (std::size_t p = 0; p < mask.pixel_count(); ++p) {
    bool set = false;
    for (int c = 0; c < png.color_channels(); ++c) set |= png.samples[p * png.channels + c] != 0;
    mask.at_pixel(p) = set ? 1 : 0;
  }
  return mask;
}

inline void save_mask_png(const Mask& mask, const std::filesystem::path& path) {
  std::vector<std::uint16_t> samples(mask.pixel_count());
  for (std::size_t p = 0; p < samples.size(); ++p) samples[p] = mask.at_pixel(p) ? 255 : 0;
  write_file_atomic(path, encode_png(mask.width(), mask.height(), 1, 8, samples));
}

/// Instance labels from a single-channel 8- or 16-bit PNG.
inline InstanceMap load_instance_png(const std::filesystem::path& path) {
  auto png = decode_png(read_file(path));
  if (png.channels != 1)
    fail(ErrorCode::Decode, path.string() + ": instance maps must be single-channel gray PNGs");
  InstanceMap map(png.height, png.width);
  for (std::size_t p = 0; p < map.pixel_count(); ++p) map.at_pixel(p) = png.samples[p];
  return map;
}

inline void save_instance_png(const InstanceMap& map, const std::filesystem::path& path) {
  std::vector<std::uint16_t> samples(map.pixel_count());
  for (std::size_t p = 0; p < samples.size(); ++p) {
    if (map.at_pixel(p) > 0xffff) fail(ErrorCode::InvalidArgument, "instance id exceeds 16-bit range");
    samples[p] = static_cast<std::uint16_t>(map.at_pixel(p));
  }
  write_file_atomic(path, encode_png(map.width(), map.height(), 1, 16, samples));
}

}  // namespace stainkit
