#pragma once

// Bilinear sampling with exact interpolant derivatives, forward-difference
// image gradients, and 3x3 windowed statistics for SSIM.

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "rgdepth/errors.hpp"
#include "rgdepth/geometry.hpp"
#include "rgdepth/parallel.hpp"
#include "rgdepth/tensors.hpp"

namespace rgdepth {

/// Value of the bilinear interpolant and its spatial derivatives, per channel.
struct SampledValue {
  std::vector<Real> value;
  std::vector<Real> d_du;
  std::vector<Real> d_dv;
  bool valid = false;
};

/// Allocation-free bilinear sampling into caller-provided spans of size C.
///
/// The cell used at p is [x0, x0+1] x [y0, y0+1] with x0 = floor(u) clamped to
/// W-2 (and likewise y0). On interior grid lines this selects the cell to the
/// right/below, so derivatives there are that cell's slopes; on the last
/// column/row only the left/upper cell exists. Returns false (and leaves the
/// outputs untouched) when p lies outside [0, W-1] x [0, H-1].
inline bool bilinear_sample_into(const ImageBuffer& img, const PixelCoord& p, std::span<Real> value,
                                 std::span<Real> d_du, std::span<Real> d_dv) {
  const int w = img.width();
  const int h = img.height();
  if (w < 2 || h < 2) return false;
  if (!(p.u >= 0.0 && p.v >= 0.0 && p.u <= Real(w - 1) && p.v <= Real(h - 1))) return false;

  const int x0 = std::min(int(std::floor(p.u)), w - 2);
  const int y0 = std::min(int(std::floor(p.v)), h - 2);
  const Real ax = p.u - Real(x0);
  const Real ay = p.v - Real(y0);

  const auto f00 = img.pixel(y0, x0);
  const auto f10 = img.pixel(y0, x0 + 1);
  const auto f01 = img.pixel(y0 + 1, x0);
  const auto f11 = img.pixel(y0 + 1, x0 + 1);
  for (int c = 0; c < img.channels(); ++c) {
    const Real top = f00[c] + ax * (f10[c] - f00[c]);
    const Real bottom = f01[c] + ax * (f11[c] - f01[c]);
    value[c] = top + ay * (bottom - top);
    d_du[c] = (1.0 - ay) * (f10[c] - f00[c]) + ay * (f11[c] - f01[c]);
    d_dv[c] = bottom - top;
  }
  return true;
}

inline SampledValue bilinear_sample(const ImageBuffer& img, const PixelCoord& p) {
  const auto c = std::size_t(img.channels());
  SampledValue s{std::vector<Real>(c, 0.0), std::vector<Real>(c, 0.0), std::vector<Real>(c, 0.0), false};
  s.valid = bilinear_sample_into(img, p, s.value, s.d_du, s.d_dv);
  return s;
}

struct ImageGradients {
  ImageBuffer gx;
  ImageBuffer gy;
};

/// Forward differences g[i] = x[i+1] - x[i] per channel; the last column (gx)
/// and last row (gy) are zero.
inline ImageGradients image_gradients(const ImageBuffer& img) {
  const int h = img.height();
  const int w = img.width();
  if (w < 2 || h < 2) throw DimensionError("image_gradients: need at least 2x2, got " + img.shape());
  const int ch = img.channels();
  ImageBuffer gx(h, w, ch);
  ImageBuffer gy(h, w, ch);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      for (int k = 0; k < ch; ++k) {
        if (c + 1 < w) gx.at(r, c, k) = img.at(r, c + 1, k) - img.at(r, c, k);
        if (r + 1 < h) gy.at(r, c, k) = img.at(r + 1, c, k) - img.at(r, c, k);
      }
    }
  }
  return {std::move(gx), std::move(gy)};
}

/// Local 3x3 statistics of a pair of buffers.
struct WindowStats {
  ImageBuffer mean_a;
  ImageBuffer mean_b;
  ImageBuffer var_a;
  ImageBuffer var_b;
  ImageBuffer cov_ab;
};

namespace detail {

/// Mirror without repeating the edge sample: -1 -> 1, n -> n-2.
inline int reflect_index(int i, int n) noexcept {
  if (i < 0) return -i;
  if (i >= n) return 2 * (n - 1) - i;
  return i;
}

}  // namespace detail

/// 3x3 box-filtered means, variances and covariance per pixel and channel,
/// with reflect padding at the border.
inline WindowStats window_stats(const ImageBuffer& a, const ImageBuffer& b) {
  if (!a.same_shape(b)) throw DimensionError("window_stats: shape " + a.shape() + " vs " + b.shape());
  const int h = a.height();
  const int w = a.width();
  const int ch = a.channels();
  if (w < 2 || h < 2) throw DimensionError("window_stats: need at least 2x2, got " + a.shape());

  WindowStats s{ImageBuffer(h, w, ch), ImageBuffer(h, w, ch), ImageBuffer(h, w, ch),
                ImageBuffer(h, w, ch), ImageBuffer(h, w, ch)};
  std::array<Real, 9> wa{};
  std::array<Real, 9> wb{};
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      for (int k = 0; k < ch; ++k) {
        int n = 0;
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            const int rr = detail::reflect_index(r + dr, h);
            const int cc = detail::reflect_index(c + dc, w);
            wa[n] = a.at(rr, cc, k);
            wb[n] = b.at(rr, cc, k);
            ++n;
          }
        }
        Accum sa = 0, sb = 0;
        for (int i = 0; i < 9; ++i) {
          sa += wa[i];
          sb += wb[i];
        }
        const Accum ma = sa / 9, mb = sb / 9;
        Accum vaa = 0, vbb = 0, vab = 0;
        for (int i = 0; i < 9; ++i) {
          const Accum da = wa[i] - ma, db = wb[i] - mb;
          vaa += da * da;
          vbb += db * db;
          vab += da * db;
        }
        s.mean_a.at(r, c, k) = Real(ma);
        s.mean_b.at(r, c, k) = Real(mb);
        s.var_a.at(r, c, k) = Real(vaa / 9);
        s.var_b.at(r, c, k) = Real(vbb / 9);
        s.cov_ab.at(r, c, k) = Real(vab / 9);
      }
    }
  }
  return s;
}

/// Pixels whose whole 3x3 neighbourhood (clipped to the image) is valid.
inline ValidityMask window_valid(const ValidityMask& m) {
  ValidityMask out(m.height(), m.width(), false);
  for (int r = 0; r < m.height(); ++r) {
    for (int c = 0; c < m.width(); ++c) {
      bool ok = true;
      for (int dr = -1; dr <= 1 && ok; ++dr) {
        for (int dc = -1; dc <= 1 && ok; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (rr >= 0 && cc >= 0 && rr < m.height() && cc < m.width()) ok = m.at(rr, cc);
        }
      }
      out.set(r, c, ok);
    }
  }
  return out;
}

struct WarpedImage {
  ImageBuffer image;
  ValidityMask valid;
};

/// Inverse-warps `source` into the target grid: out(p) = source(warp(p, D(p))).
/// Pixels whose warp is invalid are marked invalid and filled with the source
/// sample at the clamped location so that windowed statistics stay bounded.
inline WarpedImage warp_image(const ImageBuffer& source, const DepthMap& depth, const CameraIntrinsics& k,
                              const PoseSE3& t, int workers = 1) {
  const int h = depth.height(), w = depth.width();
  const int ch = source.channels();
  WarpedImage out{ImageBuffer(h, w, ch), ValidityMask(h, w, false)};
  const ImageSize size{source.width(), source.height()};
  parallel_rows(h, workers, [&](int row) {
    std::vector<Real> du(static_cast<std::size_t>(ch)), dv(static_cast<std::size_t>(ch));
    for (int col = 0; col < w; ++col) {
      const WarpResult wr = warp_pixel({Real(col), Real(row)}, depth.at(row, col), k, t, size);
      auto dst = out.image.pixel(row, col);
      if (wr.valid && bilinear_sample_into(source, wr.p, dst, du, dv)) {
        out.valid.set(row, col, true);
        continue;
      }
      const PixelCoord q{std::clamp(wr.p.u, 0.0, Real(size.width - 1)),
                         std::clamp(wr.p.v, 0.0, Real(size.height - 1))};
      bilinear_sample_into(source, q, dst, du, dv);
    }
  });
  return out;
}

}  // namespace rgdepth
