#pragma once

// Per-pixel Gauss-Newton residual depth and the residual-guidance loss.
//
// For a target pixel p at depth D and a source view T:
//   R(p)   = F_s(p') - F_t(p)                       (C-vector)
//   J(p)   = dF_s/dp'(p') * dp'/dD                   (C-vector)
//   delta  = -(J^T R) / (J^T J + damping)            (scalar depth increment)
// Depth is a scalar unknown, so J^T J is 1x1 and the inverse is a division.
// Pixels whose J^T J falls below a floor carry no depth information along the
// epipolar direction and are masked.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "rgdepth/errors.hpp"
#include "rgdepth/geometry.hpp"
#include "rgdepth/parallel.hpp"
#include "rgdepth/sampling.hpp"
#include "rgdepth/tensors.hpp"

namespace rgdepth {

struct GaussNewtonOptions {
  Real jtj_floor = 1e-8;
  /// Levenberg-style additive damping on J^T J.
  Real damping = 0.0;
};

struct ResidualSample {
  std::vector<Real> r;
  bool valid = false;
};

struct ResidualDepth {
  Real delta = 0.0;
  Real jtj = 0.0;
  Real residual_norm = 0.0;
  bool valid = false;
};

namespace detail {

inline void require_same_channels(const ImageBuffer& feat_t, const ImageBuffer& feat_s) {
  if (feat_t.channels() != feat_s.channels()) {
    throw DimensionError("feature channel count differs: " + feat_t.shape() + " vs " + feat_s.shape());
  }
}

inline bool on_grid(const ImageBuffer& img, const PixelCoord& p, int& row, int& col) {
  row = int(std::lround(p.v));
  col = int(std::lround(p.u));
  return row >= 0 && col >= 0 && row < img.height() && col < img.width();
}

}  // namespace detail

/// Residual and Jacobian at target pixel (row, col), written into `r` and `j`
/// (size C each). Returns false when the warp or the sampling footprint is
/// invalid; outputs are then unspecified. Scratch space `du`, `dv` must also
/// have size C.
inline bool linearize_pixel(const ImageBuffer& feat_t, const ImageBuffer& feat_s, int row, int col,
                            Real depth, const CameraIntrinsics& k, const PoseSE3& t, std::span<Real> r,
                            std::span<Real> j, std::span<Real> du, std::span<Real> dv) {
  const PixelCoord p{Real(col), Real(row)};
  const WarpResult w = warp_pixel(p, depth, k, t, {feat_s.width(), feat_s.height()});
  if (!w.valid) return false;
  if (!bilinear_sample_into(feat_s, w.p, r, du, dv)) return false;
  const Vec2 dp = warp_jacobian_depth(p, depth, k, t);
  const auto ft = feat_t.pixel(row, col);
  for (std::size_t c = 0; c < r.size(); ++c) {
    r[c] -= ft[c];
    j[c] = du[c] * dp.x() + dv[c] * dp.y();
  }
  return true;
}

/// R = F_s(warp(p, depth)) - F_t(p). `p` must address a target pixel centre.
inline ResidualSample residual(const ImageBuffer& feat_t, const ImageBuffer& feat_s, const PixelCoord& p,
                               Real depth, const CameraIntrinsics& k, const PoseSE3& t) {
  detail::require_same_channels(feat_t, feat_s);
  int row = 0, col = 0;
  if (!detail::on_grid(feat_t, p, row, col)) throw DomainError("residual: pixel outside target grid");
  const auto c = std::size_t(feat_t.channels());
  ResidualSample out{std::vector<Real>(c, 0.0), false};
  const WarpResult w = warp_pixel(p, depth, k, t, {feat_s.width(), feat_s.height()});
  if (!w.valid) return out;
  SampledValue s = bilinear_sample(feat_s, w.p);
  if (!s.valid) return out;
  const auto ft = feat_t.pixel(row, col);
  for (std::size_t i = 0; i < c; ++i) out.r[i] = s.value[i] - ft[i];
  out.valid = true;
  return out;
}

/// J_c = dF_c/du * du'/dD + dF_c/dv * dv'/dD at the warped location.
inline std::vector<Real> jacobian(const ImageBuffer& feat_s, const PixelCoord& p, Real depth,
                                  const CameraIntrinsics& k, const PoseSE3& t) {
  const WarpResult w = warp_pixel(p, depth, k, t, {feat_s.width(), feat_s.height()});
  if (!w.valid) throw DomainError("jacobian: warp is invalid at this pixel/depth");
  const SampledValue s = bilinear_sample(feat_s, w.p);
  if (!s.valid) throw DomainError("jacobian: sampling footprint leaves the source image");
  const Vec2 dp = warp_jacobian_depth(p, depth, k, t);
  std::vector<Real> j(s.value.size());
  for (std::size_t c = 0; c < j.size(); ++c) j[c] = s.d_du[c] * dp.x() + s.d_dv[c] * dp.y();
  return j;
}

/// Gauss-Newton step from a linearisation: minimiser of ||R + J * delta||^2.
inline ResidualDepth solve_residual_depth(std::span<const Real> j, std::span<const Real> r,
                                          const GaussNewtonOptions& opts = {}) {
  if (j.size() != r.size()) throw DimensionError("solve_residual_depth: J and R lengths differ");
  Accum jtj = 0, jtr = 0, rtr = 0;
  for (std::size_t c = 0; c < j.size(); ++c) {
    jtj += Accum(j[c]) * j[c];
    jtr += Accum(j[c]) * r[c];
    rtr += Accum(r[c]) * r[c];
  }
  ResidualDepth out;
  out.jtj = Real(jtj);
  out.residual_norm = Real(std::sqrt(rtr));
  if (out.jtj >= opts.jtj_floor && out.jtj > 0.0) {
    out.delta = Real(-jtr / (jtj + opts.damping));
    out.valid = std::isfinite(out.delta);
  }
  return out;
}

/// Residual depth at one target pixel. Invalid when the warp is invalid or
/// J^T J < jtj_floor.
inline ResidualDepth residual_depth(const ImageBuffer& feat_t, const ImageBuffer& feat_s, const PixelCoord& p,
                                    Real depth, const CameraIntrinsics& k, const PoseSE3& t,
                                    const GaussNewtonOptions& opts = {}) {
  detail::require_same_channels(feat_t, feat_s);
  int row = 0, col = 0;
  if (!detail::on_grid(feat_t, p, row, col)) throw DomainError("residual_depth: pixel outside target grid");
  const auto c = std::size_t(feat_t.channels());
  std::vector<Real> r(c), j(c), du(c), dv(c);
  if (!linearize_pixel(feat_t, feat_s, row, col, depth, k, t, r, j, du, dv)) return {};
  return solve_residual_depth(j, r, opts);
}

/// Dense residual depths for one source view.
struct ResidualField {
  ImageBuffer delta;          // depth increment (0 where invalid)
  ImageBuffer residual_norm;  // ||R|| (0 where the warp is invalid)
  ImageBuffer jtj;            // scalar J^T J
  ValidityMask valid;         // warp valid and jtj >= floor
  ValidityMask warp_valid;    // warp and sampling footprint valid
  Real error = 0.0;           // sum of ||R|| over warp-valid pixels
};

/// Residual depth for every pixel of the target grid. Rows are split across
/// `workers` threads; the error sum is reduced per row, then in row order.
inline ResidualField residual_field(const ImageBuffer& feat_t, const ImageBuffer& feat_s, const DepthMap& depth,
                                    const CameraIntrinsics& k, const PoseSE3& t,
                                    const GaussNewtonOptions& opts = {}, int workers = 1) {
  detail::require_same_channels(feat_t, feat_s);
  const int h = feat_t.height(), w = feat_t.width();
  if (!depth.same_grid(h, w)) throw DimensionError("residual_field: depth grid differs from target features");

  ResidualField f{ImageBuffer(h, w, 1), ImageBuffer(h, w, 1), ImageBuffer(h, w, 1),
                  ValidityMask(h, w, false), ValidityMask(h, w, false), 0.0};
  std::vector<Accum> row_error(std::size_t(h), 0);
  const auto c = std::size_t(feat_t.channels());

  parallel_rows(h, workers, [&](int row) {
    std::vector<Real> r(c), j(c), du(c), dv(c);
    for (int col = 0; col < w; ++col) {
      if (!linearize_pixel(feat_t, feat_s, row, col, depth.at(row, col), k, t, r, j, du, dv)) continue;
      const ResidualDepth d = solve_residual_depth(j, r, opts);
      f.warp_valid.set(row, col, true);
      f.residual_norm.at(row, col) = d.residual_norm;
      f.jtj.at(row, col) = d.jtj;
      row_error[std::size_t(row)] += d.residual_norm;
      if (d.valid) {
        f.delta.at(row, col) = d.delta;
        f.valid.set(row, col, true);
      }
    }
  });
  Accum e = 0;
  for (Accum x : row_error) e += x;
  f.error = Real(e);
  return f;
}

struct ResidualGuidanceTerms {
  Real value = 0.0;               // min over views of log(1 + mean |dPhi - dF|)
  std::vector<Real> per_view;     // log(1 + .) per view; NaN-free, +inf for empty views
  std::size_t best_view = 0;
  ImageBuffer map;                // |dPhi - dF| of the best view (0 off-mask)
  ValidityMask valid;             // joint mask of the best view
};

/// Residual-guidance loss with per-view detail. Each view contributes
/// log(1 + mean over jointly valid pixels of |delta_phi - delta_f|); the
/// minimum over views is returned. Views with an empty joint mask are skipped.
inline ResidualGuidanceTerms residual_guidance_terms(std::span<const ResidualField> delta_phi,
                                                     std::span<const ResidualField> delta_f) {
  if (delta_phi.size() != delta_f.size() || delta_phi.empty()) {
    throw DimensionError("residual_guidance_loss: need matching, non-empty view lists");
  }
  ResidualGuidanceTerms out;
  out.value = std::numeric_limits<Real>::infinity();
  for (std::size_t v = 0; v < delta_phi.size(); ++v) {
    const ResidualField& a = delta_phi[v];
    const ResidualField& b = delta_f[v];
    if (!a.delta.same_shape(b.delta)) throw DimensionError("residual_guidance_loss: field shapes differ");
    const ValidityMask joint = a.valid & b.valid;
    if (joint.none()) {
      out.per_view.push_back(std::numeric_limits<Real>::infinity());
      continue;
    }
    const ImageBuffer diff = abs_diff(a.delta, b.delta);
    const Real term = std::log1p(masked_mean(diff, joint));
    out.per_view.push_back(term);
    if (term < out.value) {
      out.value = term;
      out.best_view = v;
      out.map = diff;
      out.valid = joint;
    }
  }
  if (!std::isfinite(out.value)) throw EmptyReductionError("residual_guidance_loss: every view is empty");
  for (std::size_t i = 0; i < out.map.pixels(); ++i) {
    if (!out.valid[i]) out.map.data()[i] = 0.0;
  }
  return out;
}

inline Real residual_guidance_loss(std::span<const ResidualField> delta_phi,
                                   std::span<const ResidualField> delta_f) {
  return residual_guidance_terms(delta_phi, delta_f).value;
}

}  // namespace rgdepth
