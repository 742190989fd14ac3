#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "oracles.hpp"
#include "rgdepth/io.hpp"
#include "rgdepth/scenes.hpp"

using namespace rgdepth;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("rgdepth_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Texture, DeterministicAndInRange) {
  const ImageBuffer a = procedural_texture(7, 4.0, 32, 40), b = procedural_texture(7, 4.0, 32, 40);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, procedural_texture(8, 4.0, 32, 40));
  for (Real v : a.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Texture, LowFrequencyGradientBound) {
  const int w = 128;
  const ImageBuffer t = procedural_texture(3, 0.5, 96, w);
  const Real bound = 2 * std::numbers::pi * 0.5 * 0.5 / w;  // |omega| * amplitude
  const ImageGradients g = image_gradients(t);
  for (int r = 0; r + 1 < 96; ++r) {
    for (int c = 0; c + 1 < w; ++c) {
      EXPECT_LE(std::abs(g.gx.at(r, c)), bound + 1e-12);
      EXPECT_LE(std::abs(g.gy.at(r, c)), bound + 1e-12);
    }
  }
}

TEST(Generate, FrontoParallelDepthIsConstant) {
  const SceneBundle b = generate(SceneSpec::fronto_parallel(3.5));
  for (Real d : b.gt_depth.values()) EXPECT_NEAR(d, 3.5, 1e-12);
}

TEST(Generate, ZeroBaselineCopiesTarget) {
  SceneSpec s;
  s.sources = {PoseSE3::identity()};
  s.plane_normal = {0.2, 0.1, 1.0};
  const SceneBundle b = generate(s);
  for (std::size_t i = 0; i < b.target.size(); ++i) EXPECT_NEAR(b.sources[0].data()[i], b.target.data()[i], 1e-12);
}

TEST(Generate, Deterministic) {
  const SceneBundle a = generate(SceneSpec{}), b = generate(SceneSpec{});
  EXPECT_EQ(a.target, b.target);
  EXPECT_EQ(a.sources, b.sources);
  EXPECT_EQ(a.gt_depth, b.gt_depth);
}

TEST(Generate, SlantedDepthIsRayPlaneDistance) {
  SceneSpec s;
  s.plane_normal = {0.1, -0.2, 1.0};
  s.plane_offset = 2.0;
  const SceneBundle b = generate(s);
  for (int r = 0; r < 96; r += 7) {
    for (int c = 0; c < 128; c += 9) {
      const Vec3 x = backproject({Real(c), Real(r)}, b.gt_depth.at(r, c), s.intrinsics);
      EXPECT_NEAR(s.plane_normal.dot(x), 2.0, 1e-12);
    }
  }
}

TEST(Generate, InvalidSpecs) {
  SceneSpec behind;
  behind.plane_offset = -2.0;
  EXPECT_THROW(generate(behind), DomainError);
  SceneSpec past_source;
  past_source.sources = {PoseSE3::from_translation({0, 0, -3})};
  EXPECT_THROW(generate(past_source), DomainError);
  SceneSpec no_sources;
  no_sources.sources.clear();
  EXPECT_THROW(generate(no_sources), DomainError);
  SceneSpec too_far;
  too_far.d_max = 1.5;
  EXPECT_THROW(generate(too_far), DomainError);
  SceneSpec tiny;
  tiny.width = 1;
  EXPECT_THROW(generate(tiny), DimensionError);
}

TEST(Generate, RewarpConsistencyOnLateralBundles) {
  for (int seed = 1; seed <= 3; ++seed) {
    for (Real f : {2.0, 4.0, 8.0}) {
      SceneSpec s;
      s.texture_seed = std::uint64_t(seed);
      s.texture_frequency = f;
      const ConsistencyReport rep = rewarp_check(generate(s));
      EXPECT_LT(rep.worst_photometric, 1e-4);
      EXPECT_LT(rep.worst_mean_abs_error, 1e-3);
    }
  }
}

TEST(Generate, RewarpConsistencyOnLowFrequencySlantedBundles) {
  SceneSpec s;
  s.plane_normal = {0.1, -0.05, 1.0};
  s.sources = {PoseSE3::from_axis_angle({0.004, -0.01, 0.003}, {0.1, 0.02, -0.05})};
  for (Real f : {2.0, 4.0}) {
    s.texture_frequency = f;
    const ConsistencyReport rep = rewarp_check(generate(s));
    EXPECT_LT(rep.worst_photometric, 1e-4);
    EXPECT_LT(rep.worst_mean_abs_error, 1e-3);
  }
}

TEST(DerivedFeatures, IntensityAndForwardGradients) {
  Rng rng(1);
  const ImageBuffer img = oracle::random_image(rng, 5, 6, 1);
  const ImageBuffer f = derive_features(img);
  ASSERT_EQ(f.channels(), 3);
  EXPECT_EQ(f.at(2, 3, 0), img.at(2, 3));
  EXPECT_EQ(f.at(2, 3, 1), img.at(2, 4) - img.at(2, 3));
  EXPECT_EQ(f.at(2, 3, 2), img.at(3, 3) - img.at(2, 3));
  EXPECT_EQ(f.at(2, 5, 1), 0.0);
}

TEST(Metrics, PerfectPrediction) {
  const DepthMap gt = generate(SceneSpec{}).gt_depth;
  const DepthMetrics m = depth_metrics(gt, gt, ValidityMask(96, 128));
  EXPECT_EQ(m.abs_rel, 0.0);
  EXPECT_EQ(m.sq_rel, 0.0);
  EXPECT_EQ(m.rmse, 0.0);
  EXPECT_EQ(m.rmse_log, 0.0);
  EXPECT_EQ(m.delta_1, 1.0);
  EXPECT_EQ(m.delta_2, 1.0);
  EXPECT_EQ(m.delta_3, 1.0);
}

TEST(Metrics, StrictThreshold) {
  const DepthMap gt(4, 4, 2.0);
  const DepthMetrics m = depth_metrics(gt.scaled(1.25), gt, ValidityMask(4, 4));
  EXPECT_NEAR(m.abs_rel, 0.25, 1e-15);
  EXPECT_EQ(m.delta_1, 0.0);
  EXPECT_EQ(m.delta_2, 1.0);
  EXPECT_EQ(m.delta_3, 1.0);
}

TEST(Metrics, MatchesScalarOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Real> p(60), g(60);
    for (int i = 0; i < 60; ++i) g[i] = rng.uniform(0.5, 20), p[i] = g[i] * rng.uniform(0.4, 2.2);
    ValidityMask m(6, 10);
    m.set(0, 0, false);
    const DepthMetrics got = depth_metrics(DepthMap(6, 10, p), DepthMap(6, 10, g), m);
    const oracle::Metrics want = oracle::metrics({p.begin() + 1, p.end()}, {g.begin() + 1, g.end()});
    EXPECT_NEAR(got.abs_rel, want.abs_rel, 1e-12);
    EXPECT_NEAR(got.sq_rel, want.sq_rel, 1e-12);
    EXPECT_NEAR(got.rmse, want.rmse, 1e-12);
    EXPECT_NEAR(got.rmse_log, want.rmse_log, 1e-12);
    EXPECT_NEAR(got.delta_1, want.d1, 1e-12);
    EXPECT_NEAR(got.delta_2, want.d2, 1e-12);
    EXPECT_NEAR(got.delta_3, want.d3, 1e-12);
    EXPECT_LE(got.delta_1, got.delta_2);
    EXPECT_LE(got.delta_2, got.delta_3);
  }
}

TEST(Metrics, Errors) {
  EXPECT_THROW(depth_metrics(DepthMap(2, 2, 1.0), DepthMap(2, 2, 1.0), ValidityMask(2, 2, false)), EmptyReductionError);
  EXPECT_THROW(depth_metrics(DepthMap(2, 3, 1.0), DepthMap(2, 2, 1.0), ValidityMask(2, 2)), DimensionError);
}

TEST(Pfm, RoundTripBitExact) {
  Rng rng(3);
  for (int ch : {1, 3}) {
    std::vector<Real> v(5 * 7 * ch);
    for (Real& x : v) x = double(float(rng.uniform(-100, 100)));
    const ImageBuffer img(5, 7, ch, v);
    const std::string bytes = io::encode_pfm(img);
    EXPECT_EQ(bytes.substr(0, 2), ch == 1 ? "Pf" : "PF");
    EXPECT_EQ(io::decode_pfm(bytes), img);
    EXPECT_EQ(io::encode_pfm(io::decode_pfm(bytes)), bytes);
  }
}

TEST(Pfm, BottomToTopRowsLittleEndian) {
  const ImageBuffer img(2, 1, 1, std::vector<Real>{1.0, 2.0});
  const std::string bytes = io::encode_pfm(img);
  const std::string header = "Pf\n1 2\n-1.0\n";
  ASSERT_EQ(bytes.substr(0, header.size()), header);
  float first = 0;
  std::memcpy(&first, bytes.data() + header.size(), 4);
  EXPECT_EQ(first, 2.0f);  // bottom row first
}

TEST(Pfm, BigEndianInput) {
  std::string bytes = "Pf\n1 1\n1.0\n";
  const float v = 0.75f;
  std::uint32_t u = 0;
  std::memcpy(&u, &v, 4);
  for (int i = 3; i >= 0; --i) bytes.push_back(char((u >> (8 * i)) & 0xff));
  EXPECT_EQ(io::decode_pfm(bytes).at(0, 0), 0.75);
}

TEST(Pfm, MalformedReportsOffset) {
  try {
    io::decode_pfm("P5\n1 1\n-1.0\n0000");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  try {
    io::decode_pfm("Pf\n2 2\n-1.0\n12345678");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_GT(e.offset(), 0u);
  }
  EXPECT_THROW(io::decode_pfm("Pf\nx 2\n-1.0\n"), FormatError);
  EXPECT_THROW(io::decode_pfm("Pf\n1 1\n0.0\n0000"), FormatError);
  EXPECT_THROW(io::decode_pfm(""), FormatError);
}

TEST(Png, RoundTripWithinQuantization) {
  const fs::path dir = scratch_dir("png");
  Rng rng(4);
  for (int ch : {1, 3}) {
    const ImageBuffer img = oracle::random_image(rng, 6, 9, ch);
    io::write_png(dir / "x.png", img);
    const ImageBuffer back = io::read_png(dir / "x.png");
    ASSERT_TRUE(back.same_shape(img));
    for (std::size_t i = 0; i < img.size(); ++i) EXPECT_LE(std::abs(back.data()[i] - img.data()[i]), 1.0 / 255);
  }
  std::ofstream(dir / "bad.png") << "not a png";
  EXPECT_THROW(io::read_png(dir / "bad.png"), FormatError);
  EXPECT_THROW(io::read_png(dir / "missing.png"), IoError);
}

TEST(Bundle, ManifestRoundTripFullPrecision) {
  const fs::path dir = scratch_dir("bundle");
  SceneSpec s;
  s.intrinsics = {101.123456789012, 99.87654321, 63.1, 47.9};
  s.sources = {PoseSE3::from_axis_angle({0.0123456789, -0.02, 0.003}, {0.1 / 3, -0.2 / 7, 0.01})};
  s.plane_normal = {0.01, 0.02, 1.0};
  SceneBundle b = generate(s);
  b.phi = derive_feature_set(b.target, b.sources);
  io::write_bundle(dir, b);
  const SceneBundle r = io::read_bundle(dir);
  EXPECT_EQ(r.spec.intrinsics.fx, s.intrinsics.fx);
  EXPECT_EQ(r.spec.intrinsics.fy, s.intrinsics.fy);
  EXPECT_EQ(r.poses()[0].rotation(), s.sources[0].rotation());
  EXPECT_EQ(r.poses()[0].translation(), s.sources[0].translation());
  EXPECT_EQ(r.spec.texture_seed, s.texture_seed);
  ASSERT_TRUE(r.phi.has_value());
  EXPECT_FALSE(r.feat.has_value());
  EXPECT_EQ(r.phi->target.channels(), 3);
  // Stored as float32: reading back equals the float-rounded images.
  for (std::size_t i = 0; i < b.target.size(); ++i) EXPECT_EQ(r.target.data()[i], double(float(b.target.data()[i])));
}

TEST(Bundle, MissingOrBrokenManifest) {
  const fs::path dir = scratch_dir("broken");
  EXPECT_THROW(io::read_bundle(dir), IoError);
  std::ofstream(dir / "manifest.json") << "{ \"format\": ";
  EXPECT_THROW(io::read_bundle(dir), FormatError);
  std::ofstream(dir / "manifest.json") << "{ \"format\": \"something-else\" }";
  EXPECT_THROW(io::read_bundle(dir), FormatError);
}
