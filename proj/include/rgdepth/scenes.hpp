#pragma once

// Synthetic planar scenes with exact multi-view consistency, and the
// standard depth-error metrics.
//
// The texture lives on the plane. Every view (target and sources) renders a
// pixel by intersecting its ray with the plane and evaluating the analytic
// texture there, so no image is ever resampled from another.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <vector>

#include "rgdepth/errors.hpp"
#include "rgdepth/geometry.hpp"
#include "rgdepth/losses.hpp"
#include "rgdepth/sampling.hpp"
#include "rgdepth/tensors.hpp"

namespace rgdepth {

/// Band-limited field in [0, 1]: 0.5 + 0.5/N * sum_k sin(w * (cos t_k, sin t_k) . (a, b) + phase_k)
/// with |w| = 2 pi * frequency / width (frequency in cycles per image width)
/// and seeded orientations/phases.
class Texture {
 public:
  static constexpr int kComponents = 8;
  static constexpr Real kAmplitude = 0.5;

  Texture(std::uint64_t seed, Real frequency, int width) {
    if (!(frequency > 0.0) || !std::isfinite(frequency)) throw DomainError("Texture: frequency must be positive");
    if (width <= 0) throw DimensionError("Texture: width must be positive");
    const Real omega = 2.0 * std::numbers::pi * frequency / Real(width);
    std::mt19937_64 rng(seed);
    // 53-bit uniform in [0, 1); independent of the standard library's distributions.
    auto uniform = [&rng] { return Real(rng() >> 11) * 0x1.0p-53; };
    for (int i = 0; i < kComponents; ++i) {
      const Real theta = std::numbers::pi * uniform();
      const Real phase = 2.0 * std::numbers::pi * uniform();
      wa_[i] = omega * std::cos(theta);
      wb_[i] = omega * std::sin(theta);
      phase_[i] = phase;
    }
  }

  Real operator()(Real a, Real b) const noexcept {
    Real s = 0.0;
    for (int i = 0; i < kComponents; ++i) s += std::sin(wa_[i] * a + wb_[i] * b + phase_[i]);
    return 0.5 + kAmplitude * s / kComponents;
  }

 private:
  Real wa_[kComponents]{};
  Real wb_[kComponents]{};
  Real phase_[kComponents]{};
};

/// Texture sampled at the pixel centres of a `height` x `width` grid.
inline ImageBuffer procedural_texture(std::uint64_t seed, Real frequency, int height, int width) {
  const Texture tex(seed, frequency, width);
  ImageBuffer out(height, width, 1);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) out.at(r, c) = tex(Real(c), Real(r));
  }
  return out;
}

struct SceneSpec {
  int width = 128;
  int height = 96;
  CameraIntrinsics intrinsics{100.0, 100.0, 63.5, 47.5};
  /// Plane {X : normal . X = offset} in the target camera frame. The default
  /// is fronto-parallel at depth 2.
  Vec3 plane_normal{0.0, 0.0, 1.0};
  Real plane_offset = 2.0;
  /// T_{t->s} for each source view.
  std::vector<PoseSE3> sources{PoseSE3::from_translation({0.1, 0.0, 0.0}),
                               PoseSE3::from_translation({-0.1, 0.0, 0.0})};
  std::uint64_t texture_seed = 1;
  Real texture_frequency = 4.0;
  Real d_min = 0.1;
  Real d_max = 10.0;

  static SceneSpec fronto_parallel(Real depth) {
    SceneSpec s;
    s.plane_offset = depth;
    return s;
  }

  void validate() const {
    if (width < 2 || height < 2) throw DimensionError("SceneSpec: image must be at least 2x2");
    intrinsics.validate();
    if (!plane_normal.allFinite() || plane_normal.norm() == 0.0) throw DomainError("SceneSpec: plane normal is zero");
    if (!std::isfinite(plane_offset)) throw DomainError("SceneSpec: plane offset is not finite");
    if (sources.empty()) throw DomainError("SceneSpec: at least one source view is required");
    if (!(texture_frequency > 0.0)) throw DomainError("SceneSpec: texture frequency must be positive");
    if (!(d_min > 0.0) || !(d_min < d_max)) throw DomainError("SceneSpec: need 0 < d_min < d_max");
  }
};

/// Per-view feature stacks (target + one per source).
struct FeatureSet {
  ImageBuffer target;
  std::vector<ImageBuffer> sources;
};

struct SceneBundle {
  SceneSpec spec;
  ImageBuffer target;
  std::vector<ImageBuffer> sources;
  DepthMap gt_depth;
  std::optional<FeatureSet> phi;
  std::optional<FeatureSet> feat;

  const CameraIntrinsics& intrinsics() const noexcept { return spec.intrinsics; }
  const std::vector<PoseSE3>& poses() const noexcept { return spec.sources; }
};

/// Intensity plus forward-difference gradients: a 3-channel feature stack
/// derived from a single-channel image (multi-channel images use their mean).
inline ImageBuffer derive_features(const ImageBuffer& image) {
  const ImageBuffer gray = channel_mean(image);
  const ImageGradients g = image_gradients(gray);
  ImageBuffer out(gray.height(), gray.width(), 3);
  for (int r = 0; r < gray.height(); ++r) {
    for (int c = 0; c < gray.width(); ++c) {
      out.at(r, c, 0) = gray.at(r, c);
      out.at(r, c, 1) = g.gx.at(r, c);
      out.at(r, c, 2) = g.gy.at(r, c);
    }
  }
  return out;
}

inline FeatureSet derive_feature_set(const ImageBuffer& target, const std::vector<ImageBuffer>& sources) {
  FeatureSet f{derive_features(target), {}};
  for (const auto& s : sources) f.sources.push_back(derive_features(s));
  return f;
}

inline SceneBundle generate(const SceneSpec& spec) {
  spec.validate();
  const CameraIntrinsics& k = spec.intrinsics;
  const Vec3 n = spec.plane_normal.normalized();
  const Real offset = spec.plane_offset / spec.plane_normal.norm();

  // Depth of the principal ray sets the texture scale so that `frequency`
  // counts cycles across the target image.
  if (!(n.z() > 0.0) || !(offset / n.z() > 0.0)) throw DomainError("generate: plane is behind the target camera");
  const Real ref_depth = offset / n.z();

  Vec3 e1 = Vec3::UnitX() - n.x() * n;
  if (e1.norm() < 1e-6) e1 = Vec3::UnitY() - n.y() * n;
  e1.normalize();
  const Vec3 e2 = n.cross(e1);
  const Vec3 origin = offset * n;
  const Texture tex(spec.texture_seed, spec.texture_frequency, spec.width);
  auto shade = [&](const Vec3& x) {
    const Vec3 d = x - origin;
    return tex(k.fx * d.dot(e1) / ref_depth + k.cx, k.fy * d.dot(e2) / ref_depth + k.cy);
  };

  const int h = spec.height, w = spec.width;
  ImageBuffer target(h, w, 1);
  std::vector<Real> depth(std::size_t(h) * std::size_t(w));
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const Vec3 ray{(c - k.cx) / k.fx, (r - k.cy) / k.fy, 1.0};
      const Real denom = n.dot(ray);
      const Real d = denom > 0.0 ? offset / denom : -1.0;
      if (!(d > 0.0) || !std::isfinite(d)) throw DomainError("generate: plane is behind the target camera");
      if (d < spec.d_min || d > spec.d_max) throw DomainError("generate: ground-truth depth outside [d_min, d_max]");
      depth[std::size_t(r) * std::size_t(w) + std::size_t(c)] = d;
      target.at(r, c) = shade(d * ray);
    }
  }

  std::vector<ImageBuffer> sources;
  for (const PoseSE3& pose : spec.sources) {
    const Mat3 rt = pose.rotation().transpose();
    const Vec3 centre = -rt * pose.translation();
    if (!(offset - n.dot(centre) > 0.0)) throw DomainError("generate: plane is behind a source camera");
    ImageBuffer img(h, w, 1);
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const Vec3 dir = rt * Vec3{(c - k.cx) / k.fx, (r - k.cy) / k.fy, 1.0};
        const Real denom = n.dot(dir);
        const Real lambda = denom > 0.0 ? (offset - n.dot(centre)) / denom : -1.0;
        if (!(lambda > 0.0) || !std::isfinite(lambda)) {
          throw DomainError("generate: a source pixel ray does not hit the plane in front of the camera");
        }
        img.at(r, c) = shade(centre + lambda * dir);
      }
    }
    sources.push_back(std::move(img));
  }

  return SceneBundle{spec, std::move(target), std::move(sources), DepthMap(h, w, std::move(depth), spec.d_min),
                     std::nullopt, std::nullopt};
}

struct ConsistencyReport {
  std::vector<Real> photometric;     // photometric loss per source over window-valid pixels
  std::vector<Real> mean_abs_error;  // mean |target - warped source| per source
  Real worst_photometric = 0.0;
  Real worst_mean_abs_error = 0.0;
};

/// Re-warps every source into the target view through the ground-truth depth.
inline ConsistencyReport rewarp_check(const SceneBundle& b, const LossWeights& w = {}) {
  ConsistencyReport rep;
  for (std::size_t s = 0; s < b.sources.size(); ++s) {
    const WarpedImage wi = warp_image(b.sources[s], b.gt_depth, b.intrinsics(), b.poses()[s]);
    // SSIM windows that straddle the invalid band see fill values, not scene content.
    const Real ph = photometric_loss(b.target, wi.image, window_valid(wi.valid), w).value;
    const Real mae = masked_mean(abs_diff(b.target, wi.image), wi.valid);
    rep.photometric.push_back(ph);
    rep.mean_abs_error.push_back(mae);
    rep.worst_photometric = std::max(rep.worst_photometric, ph);
    rep.worst_mean_abs_error = std::max(rep.worst_mean_abs_error, mae);
  }
  return rep;
}

struct DepthMetrics {
  Real abs_rel = 0.0;
  Real sq_rel = 0.0;
  Real rmse = 0.0;
  Real rmse_log = 0.0;
  Real delta_1 = 0.0;
  Real delta_2 = 0.0;
  Real delta_3 = 0.0;
};

/// Abs Rel, Sq Rel, RMSE, RMSE log and the fractions with
/// max(pred/gt, gt/pred) < 1.25^k (strict), over valid pixels.
inline DepthMetrics depth_metrics(const DepthMap& pred, const DepthMap& gt, const ValidityMask& mask) {
  if (!pred.same_grid(gt.height(), gt.width()) || !mask.same_grid(gt.height(), gt.width())) {
    throw DimensionError("depth_metrics: grids differ");
  }
  Accum abs_rel = 0, sq_rel = 0, sq = 0, sq_log = 0;
  std::size_t n = 0, d1 = 0, d2 = 0, d3 = 0;
  for (std::size_t i = 0; i < gt.pixels(); ++i) {
    if (!mask[i]) continue;
    const Accum p = pred[i], g = gt[i];
    const Accum diff = p - g;
    abs_rel += std::abs(diff) / g;
    sq_rel += diff * diff / g;
    sq += diff * diff;
    const Accum dl = std::log(p) - std::log(g);
    sq_log += dl * dl;
    // Ratio in storage precision so that pred = 1.25 * gt sits exactly on the threshold.
    const Real ratio = std::max(pred[i] / gt[i], gt[i] / pred[i]);
    d1 += ratio < 1.25;
    d2 += ratio < 1.25 * 1.25;
    d3 += ratio < 1.25 * 1.25 * 1.25;
    ++n;
  }
  if (n == 0) throw EmptyReductionError("depth_metrics: no valid pixels");
  const Accum cnt = Accum(n);
  return {Real(abs_rel / cnt), Real(sq_rel / cnt), Real(std::sqrt(sq / cnt)), Real(std::sqrt(sq_log / cnt)),
          Real(Accum(d1) / cnt), Real(Accum(d2) / cnt), Real(Accum(d3) / cnt)};
}

}  // namespace rgdepth
