#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "rgdepth/losses.hpp"

using namespace rgdepth;

TEST(Weights, DefaultsAndValidation) {
  const LossWeights w;
  EXPECT_EQ(w.alpha, 0.85);
  EXPECT_EQ(w.lambda_sm, 1e-3);
  EXPECT_EQ(w.gamma, 0.1);
  EXPECT_NO_THROW(w.validate());
  EXPECT_THROW((LossWeights{1.5}.validate()), ConfigError);
  EXPECT_THROW((LossWeights{0.85, 1e-3, 1e-3, 1e-3, 11.0}.validate()), ConfigError);
  EXPECT_THROW((LossWeights{0.85, -1.0}.validate()), ConfigError);
}

TEST(Ssim, IdenticalIsOne) {
  Rng rng(1);
  const ImageBuffer a = oracle::random_image(rng, 9, 11, 3);
  const ImageBuffer s = ssim_map(a, a);
  for (Real v : s.data()) EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(Ssim, ConstantZeroVsOne) {
  const ImageBuffer s = ssim_map(ImageBuffer(4, 4, 1, 0.0), ImageBuffer(4, 4, 1, 1.0));
  for (Real v : s.data()) EXPECT_NEAR(v, kSsimC1 / (1 + kSsimC1), 1e-15);
}

TEST(Ssim, MatchesStraightLineOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const ImageBuffer a = oracle::random_image(rng, 7, 9, 2), b = oracle::random_image(rng, 7, 9, 2);
    const ImageBuffer s = ssim_map(a, b);
    for (int r = 0; r < 7; ++r)
      for (int c = 0; c < 9; ++c) EXPECT_NEAR(s.at(r, c), oracle::ssim_at(a, b, r, c), 1e-12);
  }
}

TEST(Ssim, DimensionMismatchThrows) {
  EXPECT_THROW(ssim_map(ImageBuffer(3, 3, 1), ImageBuffer(3, 3, 2)), DimensionError);
}

TEST(Photometric, Examples) {
  Rng rng(3);
  const ImageBuffer x = oracle::random_image(rng, 8, 8, 3);
  const ValidityMask all(8, 8, true);
  const MapAndScalar self = photometric_loss(x, x, all, {});
  EXPECT_EQ(self.value, 0.0);
  for (Real v : self.map.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(photometric_loss(x, x, all, LossWeights{1.0}).value, 0.0);
  EXPECT_NEAR(photometric_loss(ImageBuffer(4, 4, 1, 0.2), ImageBuffer(4, 4, 1, 0.5), ValidityMask(4, 4), LossWeights{0.0}).value,
              0.3, 1e-15);
  EXPECT_THROW(photometric_loss(x, x, ValidityMask(8, 8, false), {}), EmptyReductionError);
}

TEST(Photometric, NonNegativeAndMatchesOracle) {
  Rng rng(4);
  const ImageBuffer a = oracle::random_image(rng, 6, 6, 1), b = oracle::random_image(rng, 6, 6, 1);
  const ImageBuffer m = photometric_map(a, b, {});
  for (int r = 0; r < 6; ++r) {
    for (int c = 0; c < 6; ++c) {
      EXPECT_GE(m.at(r, c), 0.0);
      EXPECT_NEAR(m.at(r, c), oracle::photometric_at(a, b, r, c, 0.85), 1e-12);
    }
  }
}

TEST(Smoothness, ConstantDepthIsZero) {
  Rng rng(5);
  EXPECT_EQ(smoothness_loss(DepthMap(5, 5, 3.0), oracle::random_image(rng, 5, 5, 3)), 0.0);
}

TEST(Smoothness, DisparityRampByHand) {
  // Disparity 1/D = 1, 2, 3, 4 across columns; mean 2.5, so d* steps by 0.4.
  std::vector<Real> v;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) v.push_back(1.0 / (c + 1));
  const Real loss = smoothness_loss(DepthMap(4, 4, v), ImageBuffer(4, 4, 1, 0.5));
  // 3 of 4 columns carry |dx d*| = 0.4 (last column zero-padded), image is flat.
  EXPECT_NEAR(loss, 0.4 * 12.0 / 16.0, 1e-14);
}

TEST(Smoothness, ImageEdgeDiscountsDepthEdge) {
  std::vector<Real> d(36), img(36, 0.0);
  for (int r = 0; r < 6; ++r) {
    for (int c = 0; c < 6; ++c) {
      d[r * 6 + c] = c < 3 ? 1.0 : 2.0;
      img[r * 6 + c] = c < 3 ? 0.0 : 1.0;
    }
  }
  const DepthMap depth(6, 6, d);
  EXPECT_LT(smoothness_loss(depth, ImageBuffer(6, 6, 1, img)), smoothness_loss(depth, ImageBuffer(6, 6, 1, 0.0)));
}

TEST(Smoothness, ScaleInvariant) {
  Rng rng(6);
  std::vector<Real> d(100);
  for (Real& x : d) x = rng.uniform(0.5, 5);
  const DepthMap depth(10, 10, d);
  const ImageBuffer img = oracle::random_image(rng, 10, 10, 3);
  const Real base = smoothness_loss(depth, img);
  for (Real s : {0.01, 0.5, 3.0, 1000.0}) EXPECT_NEAR(smoothness_loss(depth.scaled(s), img), base, 1e-9);
}

TEST(Smoothness, DimensionMismatchThrows) {
  EXPECT_THROW(smoothness_loss(DepthMap(4, 4, 1.0), ImageBuffer(4, 5, 1)), DimensionError);
}

TEST(FeatureMetric, Examples) {
  Rng rng(7);
  const ImageBuffer a = oracle::random_image(rng, 5, 5, 4);
  const ValidityMask all(5, 5);
  EXPECT_EQ(feature_metric_loss(a, a, all), 0.0);
  EXPECT_NEAR(feature_metric_loss(a, map_unary(a, [](Real x) { return x + 0.1; }), all), 0.1, 1e-15);
  const ImageBuffer b = oracle::random_image(rng, 5, 5, 4);
  ValidityMask m(5, 5);
  m.set(1, 1, false);
  EXPECT_NEAR(feature_metric_loss(a, b, m), masked_mean(abs_diff(a, b), m), 1e-15);
  EXPECT_THROW(feature_metric_loss(a, b, ValidityMask(5, 5, false)), EmptyReductionError);
}

TEST(FeatureMetric, TriangleInequality) {
  Rng rng(8);
  for (int i = 0; i < 20; ++i) {
    const ImageBuffer a = oracle::random_image(rng, 6, 6, 2), b = oracle::random_image(rng, 6, 6, 2),
                      c = oracle::random_image(rng, 6, 6, 2);
    ValidityMask m(6, 6);
    m.set(rng.uniform_int(0, 5), rng.uniform_int(0, 5), false);
    EXPECT_LE(feature_metric_loss(a, b, m), feature_metric_loss(a, c, m) + feature_metric_loss(c, b, m) + 1e-15);
  }
}

TEST(Autoencoder, ConstantFeaturesZero) {
  Rng rng(9);
  const ImageBuffer t = oracle::random_image(rng, 5, 5, 3);
  const AutoencoderTerms a = autoencoder_loss(t, t, ImageBuffer(5, 5, 8, 0.3), {});
  EXPECT_EQ(a.l_rec, 0.0);
  EXPECT_EQ(a.l_dis, 0.0);
  EXPECT_EQ(a.l_cvt, 0.0);
  EXPECT_EQ(a.l_ae, 0.0);
}

TEST(Autoencoder, LinearRamp) {
  const Real s = -0.35;
  ImageBuffer phi(6, 7, 1);
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 7; ++c) phi.at(r, c) = s * c;
  const AutoencoderTerms a = autoencoder_loss(ImageBuffer(2, 2, 1), ImageBuffer(2, 2, 1), phi, {});
  EXPECT_NEAR(a.l_dis, -std::abs(s), 1e-15);
  EXPECT_NEAR(a.l_cvt, 0.0, 1e-15);
}

TEST(Autoencoder, WeightedAssembly) {
  Rng rng(10);
  const ImageBuffer t = oracle::random_image(rng, 5, 5, 1), r = oracle::random_image(rng, 5, 5, 1);
  const LossWeights w{0.85, 1e-3, 0.3, 0.7, 0.1};
  const AutoencoderTerms a = autoencoder_loss(t, r, oracle::random_image(rng, 5, 5, 2), w);
  EXPECT_NEAR(a.l_rec, mean(abs_diff(t, r)), 1e-15);
  EXPECT_NEAR(a.l_ae, a.l_rec + 0.3 * a.l_dis + 0.7 * a.l_cvt, 1e-15);
  EXPECT_LT(a.l_dis, 0.0);
  EXPECT_GT(a.l_cvt, 0.0);
}

TEST(Autoencoder, Errors) {
  EXPECT_THROW(autoencoder_loss(ImageBuffer(3, 3, 1), ImageBuffer(3, 3, 3), ImageBuffer(3, 3, 1), {}), DimensionError);
  EXPECT_THROW(autoencoder_loss(ImageBuffer(3, 3, 1), ImageBuffer(3, 3, 1), ImageBuffer(2, 5, 1), {}), DimensionError);
}

TEST(MinReprojection, Examples) {
  Rng rng(11);
  const ImageBuffer a = oracle::random_image(rng, 4, 4, 1);
  const ImageBuffer single[] = {a};
  EXPECT_EQ(min_reprojection(single), a);
  const ImageBuffer lower = map_unary(a, [](Real x) { return x - 1.0; });
  const ImageBuffer pair[] = {a, lower};
  EXPECT_EQ(min_reprojection(pair), lower);
  const ImageBuffer b = oracle::random_image(rng, 4, 4, 1);
  const ImageBuffer two[] = {a, b};
  const ImageBuffer m = min_reprojection(two);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_LE(m.data()[i], a.data()[i]);
    EXPECT_LE(m.data()[i], b.data()[i]);
  }
  EXPECT_THROW(min_reprojection(std::span<const ImageBuffer>{}), EmptyReductionError);
  const ImageBuffer bad[] = {a, ImageBuffer(4, 5, 1)};
  EXPECT_THROW(min_reprojection(bad), DimensionError);
}

TEST(MinReprojection, MaskedSkipsInvalidSources) {
  const ImageBuffer maps[] = {ImageBuffer(1, 3, 1, std::vector<Real>{1, 1, 1}),
                              ImageBuffer(1, 3, 1, std::vector<Real>{5, 0, 5})};
  ValidityMask m0(1, 3, true), m1(1, 3, true);
  m0.set(0, 0, false);
  m1.set(0, 0, false);
  m0.set(0, 2, false);
  const ValidityMask masks[] = {m0, m1};
  const MaskedMap r = min_reprojection(maps, masks);
  EXPECT_FALSE(r.valid.at(0, 0));
  EXPECT_EQ(r.map.at(0, 1), 0.0);
  EXPECT_EQ(r.map.at(0, 2), 5.0);
}

TEST(AutoMask, StaticCameraMostlyMasked) {
  Rng rng(12);
  const ImageBuffer t = oracle::random_image(rng, 8, 8, 1);
  const ImageBuffer src[] = {t};
  const ImageBuffer warped[] = {oracle::random_image(rng, 8, 8, 1)};
  EXPECT_EQ(auto_mask(t, src, warped, {}).count(), 0u);
  const ImageBuffer same[] = {t};
  EXPECT_EQ(auto_mask(t, src, same, {}).count(), 0u);  // ties excluded
}

TEST(AutoMask, PerfectWarpFullyValid) {
  Rng rng(13);
  const ImageBuffer t = oracle::random_image(rng, 8, 8, 3);
  const ImageBuffer src[] = {oracle::random_image(rng, 8, 8, 3), oracle::random_image(rng, 8, 8, 3)};
  const ImageBuffer warped[] = {t, oracle::random_image(rng, 8, 8, 3)};
  EXPECT_EQ(auto_mask(t, src, warped, {}).count(), 64u);
}

TEST(AutoMask, MatchesTwoBranchOracle) {
  Rng rng(14);
  for (int trial = 0; trial < 10; ++trial) {
    const ImageBuffer t = oracle::random_image(rng, 7, 6, 1);
    const std::vector<ImageBuffer> src{oracle::random_image(rng, 7, 6, 1), oracle::random_image(rng, 7, 6, 1)};
    const std::vector<ImageBuffer> warped{oracle::random_image(rng, 7, 6, 1), oracle::random_image(rng, 7, 6, 1)};
    const ValidityMask m = auto_mask(t, src, warped, {});
    const std::vector<bool> expect = oracle::auto_mask(t, src, warped, 0.85);
    for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_EQ(m[i], bool(expect[i]));
  }
  const ImageBuffer t(3, 3, 1);
  const ImageBuffer one[] = {t};
  EXPECT_THROW(auto_mask(t, one, std::span<const ImageBuffer>{}, {}), DimensionError);
}

TEST(TotalLoss, Arithmetic) {
  const LossWeights w;
  const LossReport zero = total_loss({}, w);
  EXPECT_EQ(zero.total, 0.0);
  const LossReport g = total_loss({0.1, 4.0, 0.2, 0, 0, 0, 0}, w);
  EXPECT_NEAR(g.l_g, 0.304, 1e-15);
  // l_ae = 1 via l_rec, l_g = 2 via l_ph, l_rg = 3.
  const LossReport t = total_loss({2.0, 0, 0, 1.0, 0, 0, 3.0}, w);
  EXPECT_NEAR(t.total, 3.3, 1e-15);
}

TEST(TotalLoss, IdentitiesOnRandomComponents) {
  Rng rng(15);
  for (int i = 0; i < 100; ++i) {
    const LossWeights w{rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform(0, 10)};
    const LossComponents c{rng.uniform(0, 5), rng.uniform(0, 5), rng.uniform(0, 5), rng.uniform(0, 5),
                           rng.uniform(-5, 0), rng.uniform(0, 5), rng.uniform(0, 5)};
    const LossReport r = total_loss(c, w);
    EXPECT_NEAR(r.l_g, r.l_ph + r.l_fm + w.lambda_sm * r.l_sm, 1e-9);
    EXPECT_NEAR(r.l_ae, r.l_rec + w.lambda_dis * r.l_dis + w.lambda_cvt * r.l_cvt, 1e-9);
    EXPECT_NEAR(r.total, r.l_ae + r.l_g + w.gamma * r.l_rg, 1e-9);
  }
}

TEST(TotalLoss, NonFiniteThrows) {
  EXPECT_THROW(total_loss({std::nan(""), 0, 0, 0, 0, 0, 0}, {}), DomainError);
  EXPECT_THROW(total_loss({0, 0, 0, 0, 0, 0, INFINITY}, {}), DomainError);
}
