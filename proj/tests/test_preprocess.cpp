#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "test_util.hpp"
#include "trot/preprocess.hpp"

using namespace trot;

namespace {

Recording constant_recording(std::size_t n, double rate = 30.0, int label = 1) {
  Recording r;
  r.user_id = "u";
  r.sample_rate = rate;
  r.acc_x.assign(n, 1.0);
  r.acc_y.assign(n, 2.0);
  r.acc_z.assign(n, 2.0);
  r.gyro_x.assign(n, 0.0);
  r.gyro_y.assign(n, 0.0);
  r.gyro_z.assign(n, 0.0);
  r.labels.assign(n, label);
  return r;
}

}  // namespace

TEST(Segment, ThreeHundredSamples) {
  const auto w = segment(constant_recording(300), 3.0, 0.5);
  ASSERT_EQ(w.size(), 5u);
  const std::size_t starts[] = {0, 45, 90, 135, 180};
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_EQ(w[k].start, starts[k]);
    EXPECT_EQ(w[k].length, 90u);
    EXPECT_EQ(w[k].label, 1);
  }
}

TEST(Segment, ExactlyOneWindow) { EXPECT_EQ(segment(constant_recording(90), 3.0, 0.5).size(), 1u); }

TEST(Segment, TooShort) { EXPECT_TROT_ERROR(segment(constant_recording(89), 3.0, 0.5), "insufficient data"); }

TEST(Segment, BadOverlap) {
  EXPECT_TROT_ERROR(segment(constant_recording(300), 3.0, 1.0), "invalid overlap");
  EXPECT_TROT_ERROR(segment(constant_recording(300), 3.0, -0.1), "invalid overlap");
  // 90 samples at 99.9% overlap rounds the step to 0.
  EXPECT_TROT_ERROR(segment(constant_recording(300), 3.0, 0.999), "invalid overlap");
}

TEST(Segment, Majority) {
  std::vector<int> tie{1, 1, 2, 2};
  EXPECT_FALSE(majority_label(tie).has_value());
  std::vector<int> win{1, 2, 2};
  EXPECT_EQ(majority_label(win), 2);
}

TEST(Magnitude, Examples) {
  EXPECT_DOUBLE_EQ(magnitude(3, 4, 0), 5.0);
  EXPECT_DOUBLE_EQ(magnitude(0, 0, 0), 0.0);
  EXPECT_NEAR(magnitude(1, 1, 1), 1.7320508, 1e-7);
}

TEST(Features, ConstantWindow) {
  std::vector<double> x(8, 2.0);
  const auto f = extract_features(x);
  EXPECT_DOUBLE_EQ(f[0], 2.0);  // mean
  EXPECT_DOUBLE_EQ(f[1], 0.0);  // var
  EXPECT_DOUBLE_EQ(f[2], 0.0);  // std
  EXPECT_DOUBLE_EQ(f[3], 2.0);  // mode
  EXPECT_DOUBLE_EQ(f[4], 2.0);  // max
  EXPECT_DOUBLE_EQ(f[5], 2.0);  // min
  EXPECT_DOUBLE_EQ(f[6], 0.0);  // mean crossing rate
  EXPECT_DOUBLE_EQ(f[7], 0.0);  // range
  EXPECT_DOUBLE_EQ(f[8], 2.0);  // DC
  for (double v : f) EXPECT_TRUE(std::isfinite(v));
}

TEST(Features, MeanCrossing) {
  std::vector<double> x{1, 3, 1, 3};
  const auto f = extract_features(x);
  EXPECT_DOUBLE_EQ(f[0], 2.0);
  EXPECT_DOUBLE_EQ(f[6], 1.0);
}

TEST(Features, SymmetricSkew) {
  std::vector<double> s{1, 2, 3, 4, 5};
  EXPECT_NEAR(moments(s).skewness, 0.0, 1e-12);
  std::vector<double> t{1, 2, 3, 2, 1};
  EXPECT_NEAR(moments(t).skewness, oracle::stats(t).skew, 1e-12);
}

TEST(Features, NonFinite) {
  std::vector<double> x{1.0, NAN, 2.0};
  EXPECT_TROT_ERROR(extract_features(x), "invalid sample");
}

TEST(Features, SineAgainstTextbook) {
  std::vector<double> x(16);
  for (std::size_t t = 0; t < x.size(); ++t) x[t] = 1.5 + std::sin(2.0 * std::numbers::pi * 3.0 * t / 16.0 + 0.4);
  const auto f = extract_features(x);

  const auto base = oracle::stats(x);
  std::vector<double> amp;
  for (double v : x) amp.push_back(std::abs(v - base.mean));
  const auto a = oracle::stats(amp);
  const auto s = oracle::stats(oracle::dft_magnitudes(x));
  const double mx = *std::max_element(x.begin(), x.end()), mn = *std::min_element(x.begin(), x.end());

  const double expect[] = {base.mean, base.var, base.sd,   /* mode */ 0.0, mx,     mn,
                           /* mcr */ 0.0, mx - mn, base.mean, a.mean, a.var,  a.sd,
                           a.skew,    a.kurt,   s.mean,    s.var,  s.sd,   s.skew, s.kurt};
  for (std::size_t k = 0; k < 19; ++k) {
    if (k == 3 || k == 6) continue;
    EXPECT_NEAR(f[k], expect[k], 1e-9 * std::max(1.0, std::abs(expect[k]))) << "feature " << k;
  }
  int changes = 0;
  for (std::size_t t = 1; t < x.size(); ++t)
    if ((x[t] - base.mean) * (x[t - 1] - base.mean) < 0.0) ++changes;
  EXPECT_NEAR(f[6], changes / 15.0, 1e-12);
  EXPECT_GE(f[3], mn);
  EXPECT_LE(f[3], mx);
}

TEST(Features, PermutationInvariance) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> x(40);
  for (double& v : x) v = n(rng);
  auto y = x;
  std::shuffle(y.begin(), y.end(), rng);
  const auto fx = extract_features(x), fy = extract_features(y);
  for (std::size_t k : {0u, 1u, 2u, 3u, 4u, 5u, 7u, 8u, 9u, 10u, 11u, 12u, 13u})
    EXPECT_NEAR(fx[k], fy[k], 1e-9) << "feature " << k;
  EXPECT_NE(fx[14], fy[14]);
}

TEST(Featurize, DimensionAndIndex) {
  auto rec = constant_recording(300);
  for (std::size_t t = 0; t < rec.size(); ++t) rec.gyro_x[t] = std::sin(0.3 * t);
  const auto ds = featurize(rec, 3.0, 0.5, 10);
  ASSERT_EQ(ds.size(), 5u);
  for (std::size_t k = 0; k < ds.size(); ++k) {
    EXPECT_EQ(ds.windows[k].features.size(), kFeatureDim);
    EXPECT_EQ(ds.windows[k].window_index, 10 + k);
  }
  EXPECT_DOUBLE_EQ(ds.windows[0].features[0], 3.0);
}

TEST(Featurize, TiedWindowDropped) {
  auto rec = constant_recording(180);
  // Window 1 (samples 45..134) is split evenly between labels 1 and 2.
  for (std::size_t t = 90; t < 180; ++t) rec.labels[t] = 2;
  const auto ds = featurize(rec, 3.0, 0.5);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.windows[0].window_index, 0u);
  EXPECT_EQ(ds.windows[1].window_index, 2u);
}

TEST(Scaler, Examples) {
  FeatureDataset ds;
  for (double v : {-2.0, 1.0, 4.0}) ds.windows.push_back({{v, 0.0, v / 4.0}, 0, ds.size()});
  const auto s = maxabs_fit_apply(ds);
  EXPECT_DOUBLE_EQ(s.windows[0].features[0], -0.5);
  EXPECT_DOUBLE_EQ(s.windows[1].features[0], 0.25);
  EXPECT_DOUBLE_EQ(s.windows[2].features[0], 1.0);
  for (const auto& w : s.windows) EXPECT_EQ(w.features[1], 0.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(s.windows[i].features[2], ds.windows[i].features[2]);
  ASSERT_TRUE(s.scaler);
  EXPECT_EQ(s.scaler->scale[1], 1.0);
}

TEST(Scaler, ReferenceAppliedUnchanged) {
  FeatureDataset a, b;
  a.windows.push_back({{2.0, -4.0}, 0, 0});
  b.windows.push_back({{8.0, 1.0}, 0, 0});
  const auto sa = maxabs_fit_apply(a);
  const auto sb = maxabs_fit_apply(b, sa.scaler);
  EXPECT_DOUBLE_EQ(sb.windows[0].features[0], 4.0);
  EXPECT_DOUBLE_EQ(sb.windows[0].features[1], 0.25);
  FeatureDataset c;
  c.windows.push_back({{1.0}, 0, 0});
  EXPECT_TROT_ERROR(maxabs_fit_apply(c, sa.scaler), "scaler mismatch");
  EXPECT_TROT_ERROR(maxabs_fit_apply(FeatureDataset{}), "empty dataset");
}
