#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "stainkit/error.hpp"

namespace stainkit {

/// Dense row-major H x W x Channels image. The Tag parameter keeps images that
/// share a storage type but not a meaning (RGB floats vs optical density) apart.
template <typename T, int Channels, typename Tag = void>
class Image {
  static_assert(Channels >= 1);

 public:
  using value_type = T;
  static constexpr int channels = Channels;

  Image() = default;

  Image(int height, int width, T fill = T{}) : height_(height), width_(width) {
    check_dims(height, width);
    data_.assign(static_cast<std::size_t>(height) * width * Channels, fill);
  }

  Image(int height, int width, std::vector<T> data)
      : height_(height), width_(width), data_(std::move(data)) {
    check_dims(height, width);
    if (data_.size() != static_cast<std::size_t>(height) * width * Channels) {
      fail(ErrorCode::InvalidArgument,
           "image buffer holds " + std::to_string(data_.size()) + " values, expected " +
               std::to_string(static_cast<std::size_t>(height) * width * Channels));
    }
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(height_) * width_; }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(int y, int x, int c = 0) noexcept { return data_[index(y, x, c)]; }
  const T& operator()(int y, int x, int c = 0) const noexcept { return data_[index(y, x, c)]; }

  /// Channel c of the pixel at flat (row-major) position p.
  T& at_pixel(std::size_t p, int c = 0) noexcept { return data_[p * Channels + c]; }
  const T& at_pixel(std::size_t p, int c = 0) const noexcept { return data_[p * Channels + c]; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  template <typename U, int C2, typename Tag2>
  bool same_shape(const Image<U, C2, Tag2>& other) const noexcept {
    return height_ == other.height() && width_ == other.width();
  }

  friend bool operator==(const Image& a, const Image& b) {
    return a.height_ == b.height_ && a.width_ == b.width_ && a.data_ == b.data_;
  }

 private:
  static void check_dims(int height, int width) {
    if (height < 1 || width < 1) {
      fail(ErrorCode::InvalidArgument, "image dimensions must be positive, got " +
                                           std::to_string(height) + "x" + std::to_string(width));
    }
  }

  std::size_t index(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * Channels + c;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

struct OdTag {};

using RgbImage = Image<std::uint8_t, 3>;
/// Optical density, one value per RGB channel.
using OdImage = Image<double, 3, OdTag>;
/// Pre-quantisation RGB in [0,255] nominal range; values may fall outside before clamping.
using FloatRgbImage = Image<double, 3>;
using FloatMap = Image<double, 1>;
using LogitMap = FloatMap;
/// Boolean mask stored as 0/1 bytes.
using Mask = Image<std::uint8_t, 1>;
using TissueMask = Mask;
using ObjectMask = Mask;
using InstanceMap = Image<std::uint32_t, 1>;

template <typename A, typename B>
void require_same_shape(const A& a, const B& b, const char* what) {
  if (!a.same_shape(b)) {
    fail(ErrorCode::ShapeMismatch, std::string(what) + ": " + std::to_string(a.height()) + "x" +
                                       std::to_string(a.width()) + " vs " +
                                       std::to_string(b.height()) + "x" +
                                       std::to_string(b.width()));
  }
}

inline std::size_t count_set(const Mask& mask) {
  std::size_t n = 0;
  for (auto v : mask.data()) n += v != 0;
  return n;
}

inline Mask full_mask(int height, int width) { return Mask(height, width, 1); }

/// Mirror the image left-right.
template <typename T, int C, typename Tag>
Image<T, C, Tag> flip_horizontal(const Image<T, C, Tag>& img) {
  Image<T, C, Tag> out(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < C; ++c) out(y, img.width() - 1 - x, c) = img(y, x, c);
  return out;
}

}  // namespace stainkit
