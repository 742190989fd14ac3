#pragma once

// Self-supervision loss stack: photometric (SSIM + L1), edge-aware
// smoothness, feature-metric, auto-encoder terms, per-pixel minimum
// reprojection with auto-masking, and the assembled total.
//
// Per-pixel L1 terms average over channels. Masked pixels are excluded from
// means, never zero-filled.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rgdepth/errors.hpp"
#include "rgdepth/sampling.hpp"
#include "rgdepth/tensors.hpp"

namespace rgdepth {

struct LossWeights {
  Real alpha = 0.85;       // SSIM / L1 mix in the photometric term
  Real lambda_sm = 1e-3;   // edge-aware smoothness
  Real lambda_dis = 1e-3;  // auto-encoder discriminative term
  Real lambda_cvt = 1e-3;  // auto-encoder convergent term
  Real gamma = 0.1;        // residual guidance

  void validate() const {
    auto unit = [](Real v, const char* name) {
      if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string("LossWeights: ") + name + " must be in [0, 1]");
    };
    unit(alpha, "alpha");
    unit(lambda_sm, "lambda_sm");
    unit(lambda_dis, "lambda_dis");
    unit(lambda_cvt, "lambda_cvt");
    if (!(gamma >= 0.0 && gamma <= 10.0)) throw ConfigError("LossWeights: gamma must be in [0, 10]");
  }
};

inline constexpr Real kSsimC1 = 0.01 * 0.01;
inline constexpr Real kSsimC2 = 0.03 * 0.03;

/// Per-pixel SSIM over 3x3 windows, computed on the channel-mean intensity.
/// Single-channel output with values in [-1, 1].
inline ImageBuffer ssim_map(const ImageBuffer& a, const ImageBuffer& b) {
  if (!a.same_shape(b)) throw DimensionError("ssim_map: shape " + a.shape() + " vs " + b.shape());
  const WindowStats s = window_stats(channel_mean(a), channel_mean(b));
  ImageBuffer out(a.height(), a.width(), 1);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Real ma = s.mean_a.data()[i], mb = s.mean_b.data()[i];
    const Real num = (2 * ma * mb + kSsimC1) * (2 * s.cov_ab.data()[i] + kSsimC2);
    const Real den = (ma * ma + mb * mb + kSsimC1) * (s.var_a.data()[i] + s.var_b.data()[i] + kSsimC2);
    out.data()[i] = std::clamp(num / den, Real(-1), Real(1));  // rounding can overshoot 1 by an ulp
  }
  return out;
}

/// alpha/2 * (1 - SSIM) + (1 - alpha) * mean_c |target - warped|, per pixel.
inline ImageBuffer photometric_map(const ImageBuffer& target, const ImageBuffer& warped,
                                   const LossWeights& w) {
  const ImageBuffer ssim = ssim_map(target, warped);
  const ImageBuffer l1 = channel_mean(abs_diff(target, warped));
  return map_binary(ssim, l1, [a = w.alpha](Real s, Real d) { return 0.5 * a * (1.0 - s) + (1.0 - a) * d; });
}

struct MapAndScalar {
  ImageBuffer map;
  Real value = 0.0;
};

inline MapAndScalar photometric_loss(const ImageBuffer& target, const ImageBuffer& warped,
                                     const ValidityMask& valid, const LossWeights& w) {
  ImageBuffer m = photometric_map(target, warped, w);
  const Real v = masked_mean(m, valid);
  return {std::move(m), v};
}

/// Edge-aware smoothness of the mean-normalised inverse depth d* = d / mean(d),
/// d = 1 / D, weighted by exp(-|dI|) with |dI| averaged over image channels.
/// Averaged over all H x W pixels (forward differences, zero at the far border).
inline Real smoothness_loss(const DepthMap& depth, const ImageBuffer& image) {
  if (!image.same_grid(depth.height(), depth.width())) {
    throw DimensionError("smoothness_loss: depth and image grids differ");
  }
  std::vector<Real> inv(depth.pixels());
  Accum sum = 0;
  for (std::size_t i = 0; i < inv.size(); ++i) {
    inv[i] = 1.0 / depth[i];
    sum += inv[i];
  }
  const Real mean_inv = Real(sum / Accum(inv.size()));
  for (Real& x : inv) x /= mean_inv;

  const ImageBuffer disp(depth.height(), depth.width(), 1, std::move(inv));
  const auto dg = image_gradients(disp);
  const auto ig = image_gradients(image);
  const ImageBuffer igx = channel_mean(map_unary(ig.gx, [](Real x) { return std::abs(x); }));
  const ImageBuffer igy = channel_mean(map_unary(ig.gy, [](Real x) { return std::abs(x); }));

  Accum total = 0;
  for (std::size_t i = 0; i < disp.size(); ++i) {
    total += std::abs(dg.gx.data()[i]) * std::exp(-igx.data()[i]) +
             std::abs(dg.gy.data()[i]) * std::exp(-igy.data()[i]);
  }
  return Real(total / Accum(disp.size()));
}

/// Per-pixel channel-mean |phi_t - phi_warped|.
inline ImageBuffer feature_metric_map(const ImageBuffer& phi_t, const ImageBuffer& phi_warped) {
  return channel_mean(abs_diff(phi_t, phi_warped));
}

inline Real feature_metric_loss(const ImageBuffer& phi_t, const ImageBuffer& phi_warped,
                                const ValidityMask& valid) {
  return masked_mean(abs_diff(phi_t, phi_warped), valid);
}

struct AutoencoderTerms {
  Real l_rec = 0.0;
  Real l_dis = 0.0;
  Real l_cvt = 0.0;
  Real l_ae = 0.0;
};

/// Reconstruction L1 plus first-order (discriminative, negated so that
/// minimising it sharpens features) and second-order (convergent) feature
/// gradient terms. Gradient means run over positions where the difference is
/// defined, so a linear ramp of slope s yields l_dis = -|s| and l_cvt = 0.
inline AutoencoderTerms autoencoder_loss(const ImageBuffer& target, const ImageBuffer& recon,
                                         const ImageBuffer& phi, const LossWeights& w) {
  if (!target.same_shape(recon)) {
    throw DimensionError("autoencoder_loss: target " + target.shape() + " vs recon " + recon.shape());
  }
  const int h = phi.height();
  const int wd = phi.width();
  const int ch = phi.channels();
  if (h < 3 || wd < 3) throw DimensionError("autoencoder_loss: feature map must be at least 3x3");

  AutoencoderTerms t;
  t.l_rec = mean(abs_diff(target, recon));

  Accum dx = 0, dy = 0, dxx = 0, dyy = 0;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < wd; ++c) {
      for (int k = 0; k < ch; ++k) {
        const Real v = phi.at(r, c, k);
        if (c + 1 < wd) dx += std::abs(phi.at(r, c + 1, k) - v);
        if (r + 1 < h) dy += std::abs(phi.at(r + 1, c, k) - v);
        if (c >= 1 && c + 1 < wd) dxx += std::abs(phi.at(r, c + 1, k) - 2 * v + phi.at(r, c - 1, k));
        if (r >= 1 && r + 1 < h) dyy += std::abs(phi.at(r + 1, c, k) - 2 * v + phi.at(r - 1, c, k));
      }
    }
  }
  const Accum nx = Accum(h) * (wd - 1) * ch, ny = Accum(h - 1) * wd * ch;
  const Accum nxx = Accum(h) * (wd - 2) * ch, nyy = Accum(h - 2) * wd * ch;
  t.l_dis = -Real(dx / nx + dy / ny);
  t.l_cvt = Real(dxx / nxx + dyy / nyy);
  t.l_ae = t.l_rec + w.lambda_dis * t.l_dis + w.lambda_cvt * t.l_cvt;
  return t;
}

/// Pointwise minimum across per-source loss maps.
inline ImageBuffer min_reprojection(std::span<const ImageBuffer> maps) {
  if (maps.empty()) throw EmptyReductionError("min_reprojection: no source maps");
  ImageBuffer out = maps[0];
  for (std::size_t s = 1; s < maps.size(); ++s) {
    if (!maps[s].same_shape(out)) throw DimensionError("min_reprojection: map shapes differ");
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::min(out.data()[i], maps[s].data()[i]);
  }
  return out;
}

struct MaskedMap {
  ImageBuffer map;
  ValidityMask valid;
};

/// Minimum over the sources valid at each pixel. Pixels with no valid source
/// are invalid in the result (their map value is 0).
inline MaskedMap min_reprojection(std::span<const ImageBuffer> maps, std::span<const ValidityMask> masks) {
  if (maps.empty()) throw EmptyReductionError("min_reprojection: no source maps");
  if (maps.size() != masks.size()) throw DimensionError("min_reprojection: map/mask count mismatch");
  const int h = maps[0].height(), w = maps[0].width(), ch = maps[0].channels();
  MaskedMap out{ImageBuffer(h, w, ch), ValidityMask(h, w, false)};
  for (std::size_t s = 0; s < maps.size(); ++s) {
    if (!maps[s].same_shape(out.map) || !masks[s].same_grid(h, w)) {
      throw DimensionError("min_reprojection: map shapes differ");
    }
  }
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      for (std::size_t s = 0; s < maps.size(); ++s) {
        if (!masks[s].at(r, c)) continue;
        const bool first = !out.valid.at(r, c);
        for (int k = 0; k < ch; ++k) {
          Real& dst = out.map.at(r, c, k);
          dst = first ? maps[s].at(r, c, k) : std::min(dst, maps[s].at(r, c, k));
        }
        out.valid.set(r, c, true);
      }
    }
  }
  return out;
}

/// Static-pixel filter: a pixel is kept iff the best warped-source photometric
/// error is strictly below the best unwarped-source error.
inline ValidityMask auto_mask(const ImageBuffer& target, std::span<const ImageBuffer> sources,
                              std::span<const ImageBuffer> warped, const LossWeights& w) {
  if (sources.empty() || sources.size() != warped.size()) {
    throw DimensionError("auto_mask: need matching, non-empty source and warped lists");
  }
  std::vector<ImageBuffer> identity_maps, warped_maps;
  for (std::size_t s = 0; s < sources.size(); ++s) {
    identity_maps.push_back(photometric_map(target, sources[s], w));
    warped_maps.push_back(photometric_map(target, warped[s], w));
  }
  const ImageBuffer id_min = min_reprojection(identity_maps);
  const ImageBuffer wp_min = min_reprojection(warped_maps);
  ValidityMask m(target.height(), target.width(), false);
  for (int r = 0; r < target.height(); ++r) {
    for (int c = 0; c < target.width(); ++c) m.set(r, c, wp_min.at(r, c) < id_min.at(r, c));
  }
  return m;
}

/// Scalar loss terms fed into the assembly.
struct LossComponents {
  Real l_ph = 0.0;
  Real l_sm = 0.0;
  Real l_fm = 0.0;
  Real l_rec = 0.0;
  Real l_dis = 0.0;
  Real l_cvt = 0.0;
  Real l_rg = 0.0;
};

struct LossReport {
  Real l_ph = 0.0;
  Real l_sm = 0.0;
  Real l_fm = 0.0;
  Real l_g = 0.0;
  Real l_rec = 0.0;
  Real l_dis = 0.0;
  Real l_cvt = 0.0;
  Real l_ae = 0.0;
  Real l_rg = 0.0;
  Real total = 0.0;
  std::optional<ImageBuffer> ph_map;
  std::optional<ImageBuffer> rg_map;
};

/// l_g = l_ph + l_fm + lambda_sm * l_sm;  l_ae = l_rec + lambda_dis * l_dis +
/// lambda_cvt * l_cvt;  total = l_ae + l_g + gamma * l_rg.
inline LossReport total_loss(const LossComponents& c, const LossWeights& w) {
  for (Real v : {c.l_ph, c.l_sm, c.l_fm, c.l_rec, c.l_dis, c.l_cvt, c.l_rg}) {
    if (!std::isfinite(v)) throw DomainError("total_loss: non-finite component");
  }
  LossReport r;
  r.l_ph = c.l_ph;
  r.l_sm = c.l_sm;
  r.l_fm = c.l_fm;
  r.l_rec = c.l_rec;
  r.l_dis = c.l_dis;
  r.l_cvt = c.l_cvt;
  r.l_rg = c.l_rg;
  r.l_g = c.l_ph + c.l_fm + w.lambda_sm * c.l_sm;
  r.l_ae = c.l_rec + w.lambda_dis * c.l_dis + w.lambda_cvt * c.l_cvt;
  r.total = r.l_ae + r.l_g + w.gamma * c.l_rg;
  return r;
}

}  // namespace rgdepth
