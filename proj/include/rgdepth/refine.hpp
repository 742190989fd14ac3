#pragma once

// Dense depth refinement by repeated per-pixel Gauss-Newton increments, and a
// forward evaluation of every loss term at a given depth.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "rgdepth/errors.hpp"
#include "rgdepth/geometry.hpp"
#include "rgdepth/losses.hpp"
#include "rgdepth/parallel.hpp"
#include "rgdepth/residual_guidance.hpp"
#include "rgdepth/scenes.hpp"
#include "rgdepth/tensors.hpp"

namespace rgdepth {

struct RefineOptions {
  int max_iters = 50;
  Real step_clamp_frac = 0.5;  // |step| <= frac * D
  int backtrack_max = 8;       // step halvings before a pixel is frozen for the iteration
  Real damping = 1e-6;
  Real convergence_tol = 1e-6;  // stop when relative E decrease falls below this
  Real d_min = 0.1;
  Real d_max = 10.0;
  Real jtj_floor = 1e-8;
  int workers = 1;

  void validate() const {
    if (max_iters < 0) throw ConfigError("RefineOptions: max_iters must be >= 0");
    if (!(step_clamp_frac > 0.0 && step_clamp_frac <= 1.0)) {
      throw ConfigError("RefineOptions: step_clamp_frac must be in (0, 1]");
    }
    if (backtrack_max < 0) throw ConfigError("RefineOptions: backtrack_max must be >= 0");
    if (!(damping >= 0.0) || !(convergence_tol >= 0.0) || !(jtj_floor > 0.0)) {
      throw ConfigError("RefineOptions: damping, convergence_tol must be >= 0 and jtj_floor > 0");
    }
    if (!(d_min > 0.0) || !(d_min < d_max)) throw ConfigError("RefineOptions: need 0 < d_min < d_max");
    if (workers < 1) throw ConfigError("RefineOptions: workers must be >= 1");
  }
};

struct RefineTrace {
  std::vector<Real> error;            // E before the first and after every iteration
  std::vector<std::size_t> accepted;  // pixels whose depth changed, per iteration
  std::vector<std::size_t> masked;    // pixels without depth observability, per iteration
  std::vector<Real> rmse;            // depth RMSE vs ground truth (when supplied), same indexing as error
  bool converged = false;
};

struct RefineResult {
  DepthMap depth;
  RefineTrace trace;
  ValidityMask observable;  // pixels with D^2 * jtj >= floor at the final depth
};

namespace detail {

/// Normal equations of one pixel summed over source views, and its costs
/// averaged over the views that are valid at this depth.
struct PixelSystem {
  Accum jtj = 0;
  Accum jtr = 0;
  Accum sq = 0;   // mean_v ||R_v||^2
  Accum err = 0;  // mean_v ||R_v||
  int views = 0;
};

class PixelEvaluator {
 public:
  PixelEvaluator(const ImageBuffer& feat_t, std::span<const ImageBuffer> feats_s, const CameraIntrinsics& k,
                 std::span<const PoseSE3> poses)
      : feat_t_(feat_t), feats_s_(feats_s), k_(k), poses_(poses), r_(std::size_t(feat_t.channels())),
        j_(r_.size()), du_(r_.size()), dv_(r_.size()) {}

  PixelSystem operator()(int row, int col, Real depth) {
    PixelSystem s;
    for (std::size_t v = 0; v < feats_s_.size(); ++v) {
      if (!linearize_pixel(feat_t_, feats_s_[v], row, col, depth, k_, poses_[v], r_, j_, du_, dv_)) continue;
      Accum sq = 0;
      for (std::size_t c = 0; c < r_.size(); ++c) {
        s.jtj += Accum(j_[c]) * j_[c];
        s.jtr += Accum(j_[c]) * r_[c];
        sq += Accum(r_[c]) * r_[c];
      }
      s.sq += sq;
      s.err += std::sqrt(sq);
      ++s.views;
    }
    if (s.views > 1) {
      s.sq /= s.views;
      s.err /= s.views;
    }
    return s;
  }

 private:
  const ImageBuffer& feat_t_;
  std::span<const ImageBuffer> feats_s_;
  const CameraIntrinsics& k_;
  std::span<const PoseSE3> poses_;
  std::vector<Real> r_, j_, du_, dv_;
};

inline Real rmse(const DepthMap& a, const DepthMap& b, const ValidityMask& m) {
  Accum s = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.pixels(); ++i) {
    if (!m[i]) continue;
    const Accum d = Accum(a[i]) - b[i];
    s += d * d;
    ++n;
  }
  return n ? Real(std::sqrt(s / Accum(n))) : 0.0;
}

}  // namespace detail

/// Gauss-Newton depth refinement over one or more source views.
///
/// Each iteration solves every pixel's scalar normal equation summed over views
/// (sum J^T J, sum J^T R), clamps the step to +-step_clamp_frac * D, and halves
/// it until neither the pixel's view-averaged ||R||^2 nor its view-averaged ||R||
/// increases (otherwise the pixel keeps its depth for this iteration). The error
/// E = sum over pixels of the view-averaged ||R|| (the plain sum of ||R|| for a
/// single source) is therefore non-increasing. Views may enter or leave a
/// pixel's valid set as its depth moves. The step is -J^T R / (J^T J + damping / D^2)
/// and a pixel is observable iff D^2 J^T J >= jtj_floor, which keeps the result
/// equivariant to a joint scaling of depth and translation. Throws
/// NoObservabilityError if no pixel is observable at the initial depth.
inline RefineResult gn_refine(const DepthMap& depth0, const ImageBuffer& feat_t, std::span<const ImageBuffer> feats_s,
                              const CameraIntrinsics& k, std::span<const PoseSE3> poses, const RefineOptions& opts,
                              const DepthMap* gt = nullptr) {
  opts.validate();
  k.validate();
  if (feats_s.empty()) throw DomainError("gn_refine: at least one source view is required");
  if (feats_s.size() != poses.size()) throw DimensionError("gn_refine: feature/pose count mismatch");
  const int h = feat_t.height(), w = feat_t.width();
  if (!depth0.same_grid(h, w)) throw DimensionError("gn_refine: depth grid differs from target features");
  for (const auto& f : feats_s) detail::require_same_channels(feat_t, f);
  for (Real d : depth0.values()) {
    if (d < opts.d_min || d > opts.d_max) throw DomainError("gn_refine: initial depth outside [d_min, d_max]");
  }
  if (gt && !gt->same_grid(h, w)) throw DimensionError("gn_refine: ground-truth grid differs");

  std::vector<Real> depth(depth0.values().begin(), depth0.values().end());
  std::vector<detail::PixelSystem> sys(depth.size());
  auto idx = [w](int r, int c) { return std::size_t(r) * std::size_t(w) + std::size_t(c); };

  // Initial linearisation.
  parallel_rows(h, opts.workers, [&](int row) {
    detail::PixelEvaluator eval(feat_t, feats_s, k, poses);
    for (int col = 0; col < w; ++col) sys[idx(row, col)] = eval(row, col, depth[idx(row, col)]);
  });

  // Damping and the observability floor act on the depth-normalised system
  // (J * D), so neither introduces a length scale into the solve.
  auto observable_at = [&](const detail::PixelSystem& s, Real d) {
    return s.views != 0 && Real(s.jtj) * d * d >= opts.jtj_floor;
  };
  auto total_error = [&] {
    std::vector<Accum> rows(std::size_t(h), 0);
    parallel_rows(h, opts.workers, [&](int row) {
      for (int col = 0; col < w; ++col) rows[std::size_t(row)] += sys[idx(row, col)].err;
    });
    Accum e = 0;
    for (Accum x : rows) e += x;
    return Real(e);
  };
  auto observable_mask = [&] {
    ValidityMask m(h, w, false);
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) m.set(r, c, observable_at(sys[idx(r, c)], depth[idx(r, c)]));
    }
    return m;
  };

  ValidityMask obs = observable_mask();
  if (obs.none()) throw NoObservabilityError("gn_refine: no pixel constrains depth (J^T J below floor everywhere)");

  RefineTrace trace;
  auto record_rmse = [&] {
    if (gt) trace.rmse.push_back(detail::rmse(DepthMap(h, w, depth, opts.d_min), *gt, observable_mask()));
  };
  trace.error.push_back(total_error());
  record_rmse();

  for (int it = 0; it < opts.max_iters; ++it) {
    std::vector<std::size_t> row_accepted(std::size_t(h), 0), row_masked(std::size_t(h), 0);
    parallel_rows(h, opts.workers, [&](int row) {
      detail::PixelEvaluator eval(feat_t, feats_s, k, poses);
      for (int col = 0; col < w; ++col) {
        const std::size_t i = idx(row, col);
        const detail::PixelSystem cur = sys[i];
        const Real d = depth[i];
        if (!observable_at(cur, d)) {
          ++row_masked[std::size_t(row)];
          continue;
        }
        const Real limit = opts.step_clamp_frac * d;
        Real step = std::clamp(Real(-cur.jtr / (cur.jtj + opts.damping / (d * d))), -limit, limit);
        for (int attempt = 0; attempt <= opts.backtrack_max; ++attempt, step *= 0.5) {
          const Real cand = std::clamp(d + step, opts.d_min, opts.d_max);
          if (cand == d) break;
          const detail::PixelSystem next = eval(row, col, cand);
          if (next.views > 0 && next.sq <= cur.sq && next.err <= cur.err) {
            depth[i] = cand;
            sys[i] = next;
            ++row_accepted[std::size_t(row)];
            break;
          }
        }
      }
    });

    std::size_t accepted = 0, masked = 0;
    for (int r = 0; r < h; ++r) {
      accepted += row_accepted[std::size_t(r)];
      masked += row_masked[std::size_t(r)];
    }
    const Real prev = trace.error.back();
    const Real cur = total_error();
    trace.error.push_back(cur);
    trace.accepted.push_back(accepted);
    trace.masked.push_back(masked);
    record_rmse();
    if (cur == 0.0 || prev - cur < opts.convergence_tol * prev) {
      trace.converged = true;
      break;
    }
  }

  ValidityMask final_obs = observable_mask();
  return {DepthMap(h, w, std::move(depth), opts.d_min), std::move(trace), std::move(final_obs)};
}

struct EvaluateOptions {
  GaussNewtonOptions gauss_newton{};
  int workers = 1;
};

/// Every loss term at `depth`: photometric (per-pixel minimum over sources,
/// auto-masked), smoothness, feature-metric (same minimum and mask),
/// auto-encoder terms against `recon`, and residual guidance between the
/// `phi` and `feat` stacks; assembled by total_loss.
inline LossReport evaluate_all(const DepthMap& depth, const SceneBundle& scene, const FeatureSet& phi,
                               const FeatureSet& feat, const ImageBuffer& recon, const LossWeights& w,
                               const EvaluateOptions& opts = {}) {
  w.validate();
  const std::size_t views = scene.sources.size();
  if (views == 0 || scene.poses().size() != views) throw DimensionError("evaluate_all: source/pose count mismatch");
  if (phi.sources.size() != views || feat.sources.size() != views) {
    throw DimensionError("evaluate_all: feature stacks must cover every source view");
  }
  const int h = scene.target.height(), wd = scene.target.width();
  if (!depth.same_grid(h, wd)) throw DimensionError("evaluate_all: depth grid differs from target image");
  const CameraIntrinsics& k = scene.intrinsics();

  std::vector<ImageBuffer> warped, ph_maps, fm_maps;
  std::vector<ValidityMask> masks, fm_masks;
  for (std::size_t s = 0; s < views; ++s) {
    WarpedImage wi = warp_image(scene.sources[s], depth, k, scene.poses()[s], opts.workers);
    ph_maps.push_back(photometric_map(scene.target, wi.image, w));
    masks.push_back(wi.valid);
    warped.push_back(std::move(wi.image));

    WarpedImage wf = warp_image(phi.sources[s], depth, k, scene.poses()[s], opts.workers);
    fm_maps.push_back(feature_metric_map(phi.target, wf.image));
    fm_masks.push_back(std::move(wf.valid));
  }
  const MaskedMap ph = min_reprojection(std::span<const ImageBuffer>(ph_maps), std::span<const ValidityMask>(masks));
  const ValidityMask keep = auto_mask(scene.target, scene.sources, warped, w) & ph.valid;
  const MaskedMap fm =
      min_reprojection(std::span<const ImageBuffer>(fm_maps), std::span<const ValidityMask>(fm_masks));

  LossComponents c;
  c.l_ph = masked_mean(ph.map, keep);
  c.l_fm = masked_mean(fm.map, keep & fm.valid);
  c.l_sm = smoothness_loss(depth, scene.target);
  const AutoencoderTerms ae = autoencoder_loss(scene.target, recon, phi.target, w);
  c.l_rec = ae.l_rec;
  c.l_dis = ae.l_dis;
  c.l_cvt = ae.l_cvt;

  std::vector<ResidualField> rf_phi, rf_feat;
  for (std::size_t s = 0; s < views; ++s) {
    rf_phi.push_back(residual_field(phi.target, phi.sources[s], depth, k, scene.poses()[s], opts.gauss_newton,
                                    opts.workers));
    rf_feat.push_back(residual_field(feat.target, feat.sources[s], depth, k, scene.poses()[s], opts.gauss_newton,
                                     opts.workers));
  }
  ResidualGuidanceTerms rg = residual_guidance_terms(rf_phi, rf_feat);
  c.l_rg = rg.value;

  LossReport report = total_loss(c, w);
  ImageBuffer ph_map = ph.map;
  for (std::size_t i = 0; i < ph_map.pixels(); ++i) {
    if (!keep[i]) ph_map.data()[i] = 0.0;
  }
  report.ph_map = std::move(ph_map);
  report.rg_map = std::move(rg.map);
  return report;
}

}  // namespace rgdepth
