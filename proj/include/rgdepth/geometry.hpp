#pragma once

// Pinhole camera, rigid poses and the per-pixel inverse warp
//
//     p' = K * T * D(p) * K^-1 * p
//
// Conventions: camera frame is x right, y down, z forward (optical axis).
// Pixel (u, v) = (column, row); integer coordinates address pixel centres and
// the image domain is [0, W-1] x [0, H-1]. Rotations are right-handed about
// their axis, so a +90 degree rotation about y maps (1, 0, 0) to (0, 0, -1).
// A pose T_{t->s} maps points from the target camera frame into the source
// camera frame: x_s = R * x_t + t.

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>
#include <string>

#include "rgdepth/errors.hpp"
#include "rgdepth/tensors.hpp"

namespace rgdepth {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Points with z <= this are treated as behind the camera.
inline constexpr Real kBehindCameraEps = 1e-6;
/// Tolerance (pixels) within which a warped coordinate is snapped onto the grid edge.
inline constexpr Real kBorderSnap = 1e-9;

struct CameraIntrinsics {
  Real fx = 1.0;
  Real fy = 1.0;
  Real cx = 0.0;
  Real cy = 0.0;

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(fx) || !std::isfinite(fy)) {
      throw DomainError("CameraIntrinsics: focal lengths must be positive and finite");
    }
    if (!std::isfinite(cx) || !std::isfinite(cy)) {
      throw DomainError("CameraIntrinsics: principal point must be finite");
    }
  }

  Mat3 matrix() const {
    Mat3 k;
    k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
    return k;
  }

  /// Closed-form K^-1 for the zero-skew pinhole model.
  Mat3 inverse() const {
    Mat3 k;
    k << 1.0 / fx, 0, -cx / fx, 0, 1.0 / fy, -cy / fy, 0, 0, 1;
    return k;
  }

  friend bool operator==(const CameraIntrinsics&, const CameraIntrinsics&) = default;
};

struct PixelCoord {
  Real u = 0.0;
  Real v = 0.0;
};

struct ImageSize {
  int width = 0;
  int height = 0;

  bool contains(const PixelCoord& p) const noexcept {
    return p.u >= 0.0 && p.v >= 0.0 && p.u <= Real(width - 1) && p.v <= Real(height - 1);
  }
};

/// Rigid transform with an orthonormal rotation matrix validated on construction.
class PoseSE3 {
 public:
  static constexpr Real kOrthoTol = 1e-9;

  PoseSE3() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}

  PoseSE3(const Mat3& rotation, const Vec3& translation)
      : rotation_(rotation), translation_(translation) {
    if (!rotation_.allFinite() || !translation_.allFinite()) {
      throw DomainError("PoseSE3: non-finite entries");
    }
    const Mat3 gram = rotation_.transpose() * rotation_;
    if ((gram - Mat3::Identity()).cwiseAbs().maxCoeff() > kOrthoTol) {
      throw DomainError("PoseSE3: rotation is not orthonormal");
    }
    if (std::abs(rotation_.determinant() - 1.0) > kOrthoTol) {
      throw DomainError("PoseSE3: rotation determinant is not +1");
    }
  }

  static PoseSE3 identity() { return {}; }

  static PoseSE3 from_translation(const Vec3& t) { return PoseSE3(Mat3::Identity(), t); }

  /// Rotation given as axis * angle (radians); zero vector means no rotation.
  static PoseSE3 from_axis_angle(const Vec3& axis_angle, const Vec3& t = Vec3::Zero()) {
    const Real angle = axis_angle.norm();
    if (angle == 0.0) return from_translation(t);
    return PoseSE3(Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix(), t);
  }

  const Mat3& rotation() const noexcept { return rotation_; }
  const Vec3& translation() const noexcept { return translation_; }

  Vec3 apply(const Vec3& x) const { return rotation_ * x + translation_; }

  PoseSE3 inverse() const {
    const Mat3 rt = rotation_.transpose();
    return PoseSE3(rt, -rt * translation_);
  }

  /// Same rotation, translation multiplied by `s`.
  PoseSE3 scaled_translation(Real s) const { return PoseSE3(rotation_, translation_ * s); }

 private:
  Mat3 rotation_;
  Vec3 translation_;
};

/// `a` after `b`: compose(a, b).apply(x) == a.apply(b.apply(x)).
inline PoseSE3 compose(const PoseSE3& a, const PoseSE3& b) {
  return PoseSE3(a.rotation() * b.rotation(), a.rotation() * b.translation() + a.translation());
}

inline PoseSE3 invert(const PoseSE3& t) { return t.inverse(); }

/// depth * K^-1 * (u, v, 1); the returned point has z == depth.
inline Vec3 backproject(const PixelCoord& p, Real depth, const CameraIntrinsics& k) {
  if (!(depth > 0.0) || !std::isfinite(depth)) throw DomainError("backproject: depth must be positive");
  return {depth * (p.u - k.cx) / k.fx, depth * (p.v - k.cy) / k.fy, depth};
}

inline Vec3 transform(const Vec3& x, const PoseSE3& t) { return t.apply(x); }

inline PixelCoord project(const Vec3& x, const CameraIntrinsics& k, Real z_eps = kBehindCameraEps) {
  if (!(x.z() > z_eps)) throw BehindCameraError("project: point at or behind the camera");
  return {k.fx * x.x() / x.z() + k.cx, k.fy * x.y() / x.z() + k.cy};
}

struct WarpResult {
  PixelCoord p;
  bool valid = false;
};

/// p' = project(T * backproject(p, depth)). Invalid when the warped point is
/// behind the source camera or p' falls outside the image domain.
inline WarpResult warp_pixel(const PixelCoord& p, Real depth, const CameraIntrinsics& k,
                             const PoseSE3& t, const ImageSize& size,
                             Real z_eps = kBehindCameraEps) {
  const Vec3 x = t.apply(backproject(p, depth, k));
  if (!(x.z() > z_eps)) return {{}, false};
  PixelCoord q{k.fx * x.x() / x.z() + k.cx, k.fy * x.y() / x.z() + k.cy};
  // Round-off from the back-project / project round trip must not push border
  // pixels off the grid; snap anything within kBorderSnap of an edge onto it.
  const auto snap = [](Real c, Real hi) {
    if (c < 0.0 && c > -kBorderSnap) return Real(0);
    if (c > hi && c < hi + kBorderSnap) return hi;
    return c;
  };
  q.u = snap(q.u, Real(size.width - 1));
  q.v = snap(q.v, Real(size.height - 1));
  return {q, size.contains(q)};
}

/// (du'/dD, dv'/dD) of the warp at depth D.
///
/// With c = R * K^-1 * (u, v, 1) and x' = D * c + t:
///   du'/dD = fx * (c_x * x'_z - c_z * x'_x) / x'_z^2
///   dv'/dD = fy * (c_y * x'_z - c_z * x'_y) / x'_z^2
/// Throws DomainError when x' is behind the source camera.
inline Vec2 warp_jacobian_depth(const PixelCoord& p, Real depth, const CameraIntrinsics& k,
                                const PoseSE3& t, Real z_eps = kBehindCameraEps) {
  if (!(depth > 0.0)) throw DomainError("warp_jacobian_depth: depth must be positive");
  const Vec3 ray{(p.u - k.cx) / k.fx, (p.v - k.cy) / k.fy, 1.0};
  const Vec3 c = t.rotation() * ray;
  const Vec3 x = depth * c + t.translation();
  if (!(x.z() > z_eps)) throw DomainError("warp_jacobian_depth: warp is behind the camera");
  const Real inv_z2 = 1.0 / (x.z() * x.z());
  return {k.fx * (c.x() * x.z() - c.z() * x.x()) * inv_z2,
          k.fy * (c.y() * x.z() - c.z() * x.y()) * inv_z2};
}

}  // namespace rgdepth
