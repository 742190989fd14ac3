#pragma once

// Dense grid containers shared by every module.
//
// Layout is row-major (row, column, channel) everywhere: element (r, c, k)
// of an H x W x C buffer lives at index (r * W + c) * C + k. File I/O and
// sampling both rely on this.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rgdepth/errors.hpp"

namespace rgdepth {

using Real = double;
/// Accumulator for reductions; wider than storage.
using Accum = long double;

namespace detail {

inline std::string shape_string(int h, int w, int c) {
  return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c);
}

inline void require_finite(std::span<const Real> values, const char* what) {
  for (Real v : values) {
    if (!std::isfinite(v)) throw DomainError(std::string(what) + ": non-finite value");
  }
}

}  // namespace detail

/// H x W x C grid of reals. Houses images, feature stacks and per-pixel maps.
class ImageBuffer {
 public:
  ImageBuffer() = default;

  ImageBuffer(int height, int width, int channels, Real fill = 0.0)
      : height_(height), width_(width), channels_(channels) {
    check_shape();
    if (!std::isfinite(fill)) throw DomainError("ImageBuffer: non-finite fill value");
    data_.assign(size(), fill);
  }

  ImageBuffer(int height, int width, int channels, std::vector<Real> data)
      : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
    check_shape();
    if (data_.size() != size()) {
      throw DimensionError("ImageBuffer: data length " + std::to_string(data_.size()) +
                           " does not match " + detail::shape_string(height, width, channels));
    }
    detail::require_finite(data_, "ImageBuffer");
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  int channels() const noexcept { return channels_; }
  std::size_t pixels() const noexcept { return std::size_t(height_) * std::size_t(width_); }
  std::size_t size() const noexcept { return pixels() * std::size_t(channels_); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t index(int row, int col, int ch = 0) const noexcept {
    return (std::size_t(row) * std::size_t(width_) + std::size_t(col)) * std::size_t(channels_) +
           std::size_t(ch);
  }

  Real at(int row, int col, int ch = 0) const noexcept { return data_[index(row, col, ch)]; }
  Real& at(int row, int col, int ch = 0) noexcept { return data_[index(row, col, ch)]; }

  /// All channels of one pixel.
  std::span<const Real> pixel(int row, int col) const noexcept {
    return {data_.data() + index(row, col), std::size_t(channels_)};
  }
  std::span<Real> pixel(int row, int col) noexcept {
    return {data_.data() + index(row, col), std::size_t(channels_)};
  }

  std::span<const Real> data() const noexcept { return data_; }
  std::span<Real> data() noexcept { return data_; }

  bool same_shape(const ImageBuffer& o) const noexcept {
    return height_ == o.height_ && width_ == o.width_ && channels_ == o.channels_;
  }
  bool same_grid(int h, int w) const noexcept { return height_ == h && width_ == w; }

  std::string shape() const { return detail::shape_string(height_, width_, channels_); }

  /// Single channel `ch` as its own buffer.
  ImageBuffer channel(int ch) const {
    if (ch < 0 || ch >= channels_) throw DimensionError("ImageBuffer::channel: index out of range");
    ImageBuffer out(height_, width_, 1);
    for (std::size_t i = 0; i < pixels(); ++i) out.data_[i] = data_[i * channels_ + ch];
    return out;
  }

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;

 private:
  void check_shape() const {
    if (height_ <= 0 || width_ <= 0 || channels_ <= 0) {
      throw DimensionError("ImageBuffer: invalid shape " +
                           detail::shape_string(height_, width_, channels_));
    }
  }

  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<Real> data_;
};

/// Per-pixel flags annotating an H x W grid.
class ValidityMask {
 public:
  ValidityMask() = default;
  ValidityMask(int height, int width, bool fill = true)
      : height_(height), width_(width),
        flags_(std::size_t(height) * std::size_t(width), fill ? 1 : 0) {
    if (height <= 0 || width <= 0) throw DimensionError("ValidityMask: invalid shape");
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t pixels() const noexcept { return flags_.size(); }

  bool at(int row, int col) const noexcept {
    return flags_[std::size_t(row) * std::size_t(width_) + std::size_t(col)] != 0;
  }
  void set(int row, int col, bool v) noexcept {
    flags_[std::size_t(row) * std::size_t(width_) + std::size_t(col)] = v ? 1 : 0;
  }
  bool operator[](std::size_t i) const noexcept { return flags_[i] != 0; }

  std::size_t count() const noexcept {
    return std::size_t(std::count(flags_.begin(), flags_.end(), std::uint8_t{1}));
  }
  bool none() const noexcept { return count() == 0; }

  bool same_grid(int h, int w) const noexcept { return height_ == h && width_ == w; }

  /// Pixel-wise AND.
  ValidityMask operator&(const ValidityMask& o) const {
    if (!o.same_grid(height_, width_)) throw DimensionError("ValidityMask: shape mismatch in AND");
    ValidityMask out = *this;
    for (std::size_t i = 0; i < flags_.size(); ++i) out.flags_[i] = flags_[i] & o.flags_[i];
    return out;
  }
  ValidityMask operator|(const ValidityMask& o) const {
    if (!o.same_grid(height_, width_)) throw DimensionError("ValidityMask: shape mismatch in OR");
    ValidityMask out = *this;
    for (std::size_t i = 0; i < flags_.size(); ++i) out.flags_[i] = flags_[i] | o.flags_[i];
    return out;
  }

  friend bool operator==(const ValidityMask&, const ValidityMask&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> flags_;
};

/// H x W depths in scene units, each >= `floor()` (a positive lower bound).
class DepthMap {
 public:
  static constexpr Real kDefaultFloor = 1e-6;

  DepthMap() = default;

  DepthMap(int height, int width, Real fill, Real floor = kDefaultFloor)
      : DepthMap(height, width, std::vector<Real>(std::size_t(std::max(height, 0)) *
                                                      std::size_t(std::max(width, 0)),
                                                  fill),
                 floor) {}

  DepthMap(int height, int width, std::vector<Real> values, Real floor = kDefaultFloor)
      : height_(height), width_(width), floor_(floor), values_(std::move(values)) {
    if (height <= 0 || width <= 0) throw DimensionError("DepthMap: invalid shape");
    if (!(floor > 0.0) || !std::isfinite(floor)) throw DomainError("DepthMap: floor must be positive");
    if (values_.size() != std::size_t(height) * std::size_t(width)) {
      throw DimensionError("DepthMap: value count does not match shape");
    }
    for (Real v : values_) {
      if (!std::isfinite(v)) throw DomainError("DepthMap: non-finite depth");
      if (v < floor_) throw DomainError("DepthMap: depth below floor");
    }
  }

  /// Single-channel image view of the depths.
  static DepthMap from_image(const ImageBuffer& img, Real floor = kDefaultFloor) {
    if (img.channels() != 1) throw DimensionError("DepthMap::from_image: expected one channel");
    return DepthMap(img.height(), img.width(), std::vector<Real>(img.data().begin(), img.data().end()),
                    floor);
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  Real floor() const noexcept { return floor_; }
  std::size_t pixels() const noexcept { return values_.size(); }

  Real at(int row, int col) const noexcept {
    return values_[std::size_t(row) * std::size_t(width_) + std::size_t(col)];
  }
  Real operator[](std::size_t i) const noexcept { return values_[i]; }
  std::span<const Real> values() const noexcept { return values_; }

  bool same_grid(int h, int w) const noexcept { return height_ == h && width_ == w; }

  ImageBuffer as_image() const { return ImageBuffer(height_, width_, 1, values_); }

  /// Depths multiplied by `s` (> 0); the floor scales with them.
  DepthMap scaled(Real s) const {
    if (!(s > 0.0)) throw DomainError("DepthMap::scaled: factor must be positive");
    std::vector<Real> v(values_);
    for (Real& x : v) x *= s;
    return DepthMap(height_, width_, std::move(v), floor_ * s);
  }

  friend bool operator==(const DepthMap&, const DepthMap&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  Real floor_ = kDefaultFloor;
  std::vector<Real> values_;
};

/// Element-wise `f(a[i], b[i])`.
template <typename F>
ImageBuffer map_binary(const ImageBuffer& a, const ImageBuffer& b, F&& f) {
  if (!a.same_shape(b)) {
    throw DimensionError("map_binary: shape " + a.shape() + " vs " + b.shape());
  }
  std::vector<Real> out(a.size());
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(da[i], db[i]);
  return ImageBuffer(a.height(), a.width(), a.channels(), std::move(out));
}

template <typename F>
ImageBuffer map_unary(const ImageBuffer& a, F&& f) {
  std::vector<Real> out(a.size());
  const auto da = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(da[i]);
  return ImageBuffer(a.height(), a.width(), a.channels(), std::move(out));
}

inline ImageBuffer abs_diff(const ImageBuffer& a, const ImageBuffer& b) {
  return map_binary(a, b, [](Real x, Real y) { return std::abs(x - y); });
}

/// Mean over channels, giving a single-channel buffer.
inline ImageBuffer channel_mean(const ImageBuffer& img) {
  if (img.channels() == 1) return img;
  ImageBuffer out(img.height(), img.width(), 1);
  const auto c = img.channels();
  for (int r = 0; r < img.height(); ++r) {
    for (int col = 0; col < img.width(); ++col) {
      Accum s = 0;
      for (Real v : img.pixel(r, col)) s += v;
      out.at(r, col) = Real(s / c);
    }
  }
  return out;
}

/// Mean over valid pixels and all channels.
inline Real masked_mean(const ImageBuffer& x, const ValidityMask& m) {
  if (!m.same_grid(x.height(), x.width())) throw DimensionError("masked_mean: mask shape mismatch");
  Accum sum = 0;
  std::size_t n = 0;
  for (int r = 0; r < x.height(); ++r) {
    for (int c = 0; c < x.width(); ++c) {
      if (!m.at(r, c)) continue;
      for (Real v : x.pixel(r, c)) sum += v;
      n += std::size_t(x.channels());
    }
  }
  if (n == 0) throw EmptyReductionError("masked_mean: no valid pixels");
  return Real(sum / Accum(n));
}

inline Real mean(const ImageBuffer& x) {
  return masked_mean(x, ValidityMask(x.height(), x.width(), true));
}

}  // namespace rgdepth
