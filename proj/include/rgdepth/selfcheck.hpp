#pragma once

// Oracle suites behind the `check` command: finite-difference Jacobians,
// brute-force least-squares optimality, the 1-D closed form -R/J, and
// invariance of the residual depth under affine feature changes.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "rgdepth/geometry.hpp"
#include "rgdepth/random.hpp"
#include "rgdepth/residual_guidance.hpp"
#include "rgdepth/scenes.hpp"
#include "rgdepth/tensors.hpp"

namespace rgdepth::check {

struct CheckResult {
  std::string name;
  bool passed = false;
  double max_error = 0.0;  // worst error statistic of the suite
  std::string detail;
};

using JacobianFn = std::function<std::vector<Real>(const ImageBuffer&, const PixelCoord&, Real,
                                                   const CameraIntrinsics&, const PoseSE3&)>;

/// Functions under test. Replaced by the harness to verify that a broken
/// implementation is caught.
struct Hooks {
  JacobianFn jacobian = [](const ImageBuffer& f, const PixelCoord& p, Real d, const CameraIntrinsics& k,
                           const PoseSE3& t) { return rgdepth::jacobian(f, p, d, k, t); };
};

/// Synthetic bundle used by the dense suites: slanted textured plane, one
/// source with rotation and 3-D translation.
inline SceneBundle check_scene(int seed, Real frequency) {
  SceneSpec s;
  s.texture_seed = std::uint64_t(seed);
  s.texture_frequency = frequency;
  s.plane_normal = {0.08 * seed, -0.05, 1.0};
  s.plane_offset = 2.0;
  s.sources = {PoseSE3::from_axis_angle({0.004 * seed, -0.01, 0.003}, {0.1, 0.02 * seed, -0.05})};
  return generate(s);
}

/// Ground truth scaled per pixel by a seeded factor in [1 - amp, 1 + amp].
inline DepthMap perturbed_depth(const DepthMap& gt, std::uint64_t seed, Real amp) {
  Rng rng(seed);
  std::vector<Real> v(gt.values().begin(), gt.values().end());
  for (Real& x : v) x *= 1.0 + rng.uniform(-amp, amp);
  return DepthMap(gt.height(), gt.width(), std::move(v), gt.floor());
}

inline Real vector_rel_error(std::span<const Real> a, std::span<const Real> b) {
  Real num = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(num) / std::max({std::sqrt(na), std::sqrt(nb), 1e-300});
}

/// Closed-form du'/dD, dv'/dD against central differences of warp_pixel.
inline CheckResult warp_jacobian_suite() {
  CheckResult res{"warp-jacobian", false, 0.0, {}};
  Rng rng(11);
  const CameraIntrinsics k{120.0, 110.0, 64.0, 48.0};
  const ImageSize big{100000, 100000};
  int bad = 0, n = 0;
  for (int i = 0; i < 500; ++i) {
    const PoseSE3 t = PoseSE3::from_axis_angle({rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)},
                                               {rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)});
    const PixelCoord p{rng.uniform(0, 127), rng.uniform(0, 95)};
    const Real d = rng.uniform(1.0, 10.0);
    const Real h = 1e-4 * d;
    const Vec2 j = warp_jacobian_depth(p, d, k, t);
    const WarpResult a = warp_pixel(p, d + h, k, t, big), b = warp_pixel(p, d - h, k, t, big);
    if (!a.valid || !b.valid) continue;
    const std::array<Real, 2> fd{(a.p.u - b.p.u) / (2 * h), (a.p.v - b.p.v) / (2 * h)};
    const std::array<Real, 2> an{j.x(), j.y()};
    const Real e = vector_rel_error(an, fd);
    res.max_error = std::max(res.max_error, e);
    bad += e >= 1e-5;
    ++n;
  }
  res.passed = n > 0 && bad == 0;
  res.detail = std::to_string(n) + " samples, " + std::to_string(bad) + " above 1e-5";
  return res;
}

/// Dense analytic J against central differences of the residual over depth
/// (h = 1e-4 D) on three bundles; passes when >= 99% of valid pixels agree to
/// relative error < 1e-4.
inline CheckResult jacobian_suite(const Hooks& hooks = {}) {
  CheckResult res{"jacobian", false, 0.0, {}};
  const std::array<Real, 3> freqs{2.0, 4.0, 8.0};
  Real worst_fraction = 1.0;
  std::string detail;
  for (int seed = 1; seed <= 3; ++seed) {
    const SceneBundle b = check_scene(seed, freqs[std::size_t(seed - 1)]);
    const ImageBuffer ft = derive_features(b.target);
    const ImageBuffer fs = derive_features(b.sources[0]);
    const DepthMap depth = perturbed_depth(b.gt_depth, std::uint64_t(100 + seed), 0.05);
    const PoseSE3& t = b.poses()[0];
    std::size_t valid = 0, good = 0;
    for (int r = 0; r < ft.height(); ++r) {
      for (int c = 0; c < ft.width(); ++c) {
        const PixelCoord p{Real(c), Real(r)};
        const Real d = depth.at(r, c);
        const Real h = 1e-4 * d;
        const ResidualSample plus = residual(ft, fs, p, d + h, b.intrinsics(), t);
        const ResidualSample minus = residual(ft, fs, p, d - h, b.intrinsics(), t);
        const ResidualSample mid = residual(ft, fs, p, d, b.intrinsics(), t);
        if (!plus.valid || !minus.valid || !mid.valid) continue;
        std::vector<Real> fd(plus.r.size());
        for (std::size_t i = 0; i < fd.size(); ++i) fd[i] = (plus.r[i] - minus.r[i]) / (2 * h);
        const std::vector<Real> j = hooks.jacobian(fs, p, d, b.intrinsics(), t);
        const Real e = vector_rel_error(j, fd);
        ++valid;
        good += e < 1e-4;
      }
    }
    const Real frac = valid ? Real(good) / Real(valid) : 0.0;
    worst_fraction = std::min(worst_fraction, frac);
    if (!detail.empty()) detail += ", ";
    detail += "seed " + std::to_string(seed) + ": " + std::to_string(good) + "/" + std::to_string(valid);
  }
  res.max_error = 1.0 - worst_fraction;  // fraction of disagreeing pixels
  res.passed = worst_fraction >= 0.99;
  res.detail = detail;
  return res;
}

/// Random (J, R) pairs: the Gauss-Newton step is no worse than any of 10^4
/// grid candidates spanning step +- 10.
inline CheckResult least_squares_suite(int pairs = 1000) {
  CheckResult res{"least-squares", false, 0.0, {}};
  Rng rng(23);
  const std::array<int, 3> dims{1, 3, 8};
  int failures = 0;
  for (int i = 0; i < pairs; ++i) {
    const int c = dims[std::size_t(i % 3)];
    std::vector<Real> j(static_cast<std::size_t>(c)), r(static_cast<std::size_t>(c));
    for (int k = 0; k < c; ++k) {
      j[std::size_t(k)] = rng.normal();
      r[std::size_t(k)] = rng.normal();
    }
    const ResidualDepth s = solve_residual_depth(j, r, {1e-8, 0.0});
    if (!s.valid) continue;
    auto cost = [&](Real delta) {
      Real acc = 0;
      for (int k = 0; k < c; ++k) {
        const Real e = r[std::size_t(k)] + j[std::size_t(k)] * delta;
        acc += e * e;
      }
      return acc;
    };
    const Real best = cost(s.delta);
    Real worst_gap = 0;
    for (int g = 0; g < 10000; ++g) {
      const Real cand = s.delta - 10.0 + 20.0 * Real(g) / 9999.0;
      worst_gap = std::max(worst_gap, best - cost(cand));
    }
    res.max_error = std::max(res.max_error, worst_gap);
    failures += worst_gap > 1e-12 * std::max(best, 1.0);
  }
  res.passed = failures == 0;
  res.detail = std::to_string(failures) + " pairs beaten by a grid candidate";
  return res;
}

/// For one channel and no damping the step equals -R / J.
inline CheckResult closed_form_suite(int pairs = 1000) {
  CheckResult res{"closed-form", false, 0.0, {}};
  Rng rng(31);
  int failures = 0;
  for (int i = 0; i < pairs; ++i) {
    std::array<Real, 1> j{rng.normal()}, r{rng.normal()};
    if (std::abs(j[0]) < 1e-4) continue;
    const ResidualDepth s = solve_residual_depth(j, r, {1e-8, 0.0});
    const Real closed = -r[0] / j[0];
    const Real e = std::abs(s.delta - closed) / std::max(std::abs(closed), 1e-300);
    res.max_error = std::max(res.max_error, e);
    failures += !s.valid || e > 1e-12;
  }
  res.passed = failures == 0;
  res.detail = std::to_string(failures) + " pairs differ by more than 1e-12 relative";
  return res;
}

/// F -> aF + b on a single-channel feature leaves the residual depth unchanged.
/// Evaluated at a uniformly biased depth so that every valid increment is
/// bounded away from zero (relative change is ill-conditioned at delta = 0).
inline CheckResult affine_suite() {
  CheckResult res{"affine", false, 0.0, {}};
  const SceneBundle b = check_scene(2, 4.0);
  const DepthMap depth = b.gt_depth.scaled(1.05);
  const PoseSE3& t = b.poses()[0];
  const GaussNewtonOptions opts{1e-8, 0.0};
  const ResidualField base = residual_field(b.target, b.sources[0], depth, b.intrinsics(), t, opts);
  std::size_t compared = 0;
  for (Real a : {0.1, 1.0, 10.0}) {
    for (Real off : {-1.0, 0.0, 1.0}) {
      auto affine = [a, off](Real x) { return a * x + off; };
      const ResidualField f = residual_field(map_unary(b.target, affine), map_unary(b.sources[0], affine), depth,
                                             b.intrinsics(), t, opts);
      const ValidityMask both = base.valid & f.valid;
      for (std::size_t i = 0; i < both.pixels(); ++i) {
        if (!both[i]) continue;
        const Real x = base.delta.data()[i], y = f.delta.data()[i];
        res.max_error = std::max(res.max_error, std::abs(x - y) / std::max(std::abs(x), 1e-300));
        ++compared;
      }
    }
  }
  res.passed = compared > 0 && res.max_error < 1e-8;
  res.detail = std::to_string(compared) + " pixel comparisons";
  return res;
}

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{"warp-jacobian", "jacobian", "least-squares", "closed-form", "affine"};
  return names;
}

/// Runs the suites named in `only` (all when empty). Unknown names throw.
inline std::vector<CheckResult> run(const std::vector<std::string>& only = {}, const Hooks& hooks = {}) {
  for (const auto& n : only) {
    if (std::find(suite_names().begin(), suite_names().end(), n) == suite_names().end()) {
      throw ConfigError("unknown check suite '" + n + "'");
    }
  }
  auto wanted = [&](const std::string& n) { return only.empty() || std::find(only.begin(), only.end(), n) != only.end(); };
  std::vector<CheckResult> out;
  if (wanted("warp-jacobian")) out.push_back(warp_jacobian_suite());
  if (wanted("jacobian")) out.push_back(jacobian_suite(hooks));
  if (wanted("least-squares")) out.push_back(least_squares_suite());
  if (wanted("closed-form")) out.push_back(closed_form_suite());
  if (wanted("affine")) out.push_back(affine_suite());
  return out;
}

}  // namespace rgdepth::check
