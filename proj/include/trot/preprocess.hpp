#pragma once

// Sliding-window segmentation, per-window feature extraction and max-abs
// scaling of raw accelerometer/gyroscope streams.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trot/dataset.hpp"
#include "trot/error.hpp"

namespace trot {

inline constexpr std::size_t kFeaturesPerSensor = 19;
inline constexpr std::size_t kSensorCount = 2;
inline constexpr std::size_t kFeatureDim = kFeaturesPerSensor * kSensorCount;

/// Raw multi-channel stream of one user, chronologically ordered.
struct Recording {
  std::string user_id;
  double sample_rate = 0.0;
  std::vector<double> acc_x, acc_y, acc_z;
  std::vector<double> gyro_x, gyro_y, gyro_z;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }

  void validate() const {
    if (!(sample_rate > 0.0) || !std::isfinite(sample_rate))
      throw Error("invalid recording", "sample_rate must be positive");
    const std::size_t n = labels.size();
    if (n == 0) throw Error("invalid recording", "empty recording");
    for (const auto* c : {&acc_x, &acc_y, &acc_z, &gyro_x, &gyro_y, &gyro_z})
      if (c->size() != n) throw Error("invalid recording", "channel length differs from label length");
  }
};

/// Half-open sample range [start, start + length) of a recording.
struct RawWindow {
  std::size_t start = 0;
  std::size_t length = 0;
  std::optional<int> label;  ///< absent when the vote is tied
};

/// Plurality label of `labels`; nullopt when the top count is shared.
inline std::optional<int> majority_label(std::span<const int> labels) {
  std::map<int, std::size_t> counts;
  for (int l : labels) ++counts[l];
  std::optional<int> best;
  std::size_t best_count = 0;
  bool tied = false;
  for (const auto& [label, count] : counts) {
    if (count > best_count) {
      best = label;
      best_count = count;
      tied = false;
    } else if (count == best_count) {
      tied = true;
    }
  }
  if (tied) return std::nullopt;
  return best;
}

/// Fixed-length windows with a step of round(w * (1 - overlap)) samples.
/// A trailing partial window is discarded.
inline std::vector<RawWindow> segment(const Recording& rec, double window_seconds,
                                      double overlap_fraction) {
  rec.validate();
  if (!(overlap_fraction >= 0.0 && overlap_fraction < 1.0))
    throw Error("invalid overlap", "overlap must lie in [0, 1)");
  const auto w = static_cast<long long>(std::llround(window_seconds * rec.sample_rate));
  if (w < 2) throw Error("invalid window", "window must span at least 2 samples");
  const auto step = static_cast<long long>(std::llround(static_cast<double>(w) * (1.0 - overlap_fraction)));
  if (step <= 0) throw Error("invalid overlap", "step computes to 0");
  const auto n = static_cast<long long>(rec.size());
  if (n < w) throw Error("insufficient data", "recording shorter than one window");

  std::vector<RawWindow> out;
  for (long long start = 0; start + w <= n; start += step) {
    RawWindow rw;
    rw.start = static_cast<std::size_t>(start);
    rw.length = static_cast<std::size_t>(w);
    rw.label = majority_label(std::span<const int>(rec.labels).subspan(rw.start, rw.length));
    out.push_back(rw);
  }
  return out;
}

inline double magnitude(double x, double y, double z) { return std::sqrt(x * x + y * y + z * z); }

/// Population moments of a series: mean, variance, std, skewness and excess
/// kurtosis. Skewness and kurtosis are 0 for a zero-variance series.
struct Moments {
  double mean = 0.0, variance = 0.0, stddev = 0.0, skewness = 0.0, kurtosis = 0.0;
};

inline Moments moments(std::span<const double> x) {
  Moments m;
  if (x.empty()) return m;
  const double n = static_cast<double>(x.size());
  double sum = 0.0;
  for (double v : x) sum += v;
  m.mean = sum / n;
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double d = v - m.mean;
    const double d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  m.variance = m2;
  m.stddev = std::sqrt(m2);
  // Relative cutoff so that roundoff on a constant series does not produce
  // huge skew/kurtosis values.
  const double scale = std::max(1.0, std::abs(m.mean));
  if (m2 > 1e-24 * scale * scale) {
    m.skewness = m3 / std::pow(m2, 1.5);
    m.kurtosis = m4 / (m2 * m2) - 3.0;
  }
  return m;
}

/// Midpoint of the most populated of 10 equal-width bins over [min, max];
/// ties go to the lower bin.
inline double histogram_mode(std::span<const double> x) {
  constexpr int kBins = 10;
  const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) return lo;
  const double width = (hi - lo) / kBins;
  std::array<std::size_t, kBins> counts{};
  for (double v : x) {
    int b = static_cast<int>((v - lo) / width);
    counts[static_cast<std::size_t>(std::clamp(b, 0, kBins - 1))]++;
  }
  std::size_t best = 0;
  for (std::size_t b = 1; b < counts.size(); ++b)
    if (counts[b] > counts[best]) best = b;
  return lo + (static_cast<double>(best) + 0.5) * width;
}

/// Sign changes of (x - mean) divided by (n - 1). Samples exactly at the
/// mean carry no sign and are skipped.
inline double mean_crossing_rate(std::span<const double> x, double mean) {
  if (x.size() < 2) return 0.0;
  int prev = 0;
  std::size_t changes = 0;
  for (double v : x) {
    const double d = v - mean;
    const int s = d > 0.0 ? 1 : (d < 0.0 ? -1 : 0);
    if (s == 0) continue;
    if (prev != 0 && s != prev) ++changes;
    prev = s;
  }
  return static_cast<double>(changes) / static_cast<double>(x.size() - 1);
}

/// |X_k| for k = 1 .. floor(n/2) of the unnormalized DFT (direct O(n^2)).
inline std::vector<double> single_sided_spectrum(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<double> mag;
  mag.reserve(n / 2);
  for (std::size_t k = 1; k <= n / 2; ++k) {
    std::complex<double> acc{0.0, 0.0};
    for (std::size_t t = 0; t < n; ++t) {
      const double phase = -2.0 * std::numbers::pi * static_cast<double>(k * t % n) / static_cast<double>(n);
      acc += x[t] * std::complex<double>(std::cos(phase), std::sin(phase));
    }
    mag.push_back(std::abs(acc));
  }
  return mag;
}

/// The 19 per-sensor features, in order: mean, var, std, mode, max, min,
/// mean crossing rate, range, DC, then mean/var/std/skew/kurtosis of the
/// amplitude series |x - mean|, then the same five over the spectrum.
inline std::array<double, kFeaturesPerSensor> extract_features(std::span<const double> x) {
  if (x.size() < 2) throw Error("invalid window", "window must hold at least 2 samples");
  for (double v : x)
    if (!std::isfinite(v)) throw Error("invalid sample", "non-finite sensor value");

  const Moments m = moments(x);
  const auto [lo_it, hi_it] = std::minmax_element(x.begin(), x.end());

  std::vector<double> amplitude(x.size());
  std::transform(x.begin(), x.end(), amplitude.begin(), [&](double v) { return std::abs(v - m.mean); });
  const Moments amp = moments(amplitude);
  const Moments fft = moments(single_sided_spectrum(x));

  return {m.mean,         m.variance,   m.stddev,    histogram_mode(x), *hi_it,
          *lo_it,         mean_crossing_rate(x, m.mean), *hi_it - *lo_it, m.mean,
          amp.mean,       amp.variance, amp.stddev,  amp.skewness,      amp.kurtosis,
          fft.mean,       fft.variance,  fft.stddev,  fft.skewness,      fft.kurtosis};
}

/// 38 features of one window: accelerometer magnitude then gyroscope magnitude.
inline std::vector<double> window_features(const Recording& rec, const RawWindow& w) {
  if (w.start + w.length > rec.size()) throw Error("invalid window", "window exceeds recording");
  std::vector<double> acc(w.length), gyro(w.length);
  for (std::size_t i = 0; i < w.length; ++i) {
    const std::size_t t = w.start + i;
    acc[i] = magnitude(rec.acc_x[t], rec.acc_y[t], rec.acc_z[t]);
    gyro[i] = magnitude(rec.gyro_x[t], rec.gyro_y[t], rec.gyro_z[t]);
  }
  std::vector<double> out;
  out.reserve(kFeatureDim);
  for (const auto& series : {acc, gyro}) {
    const auto f = extract_features(series);
    out.insert(out.end(), f.begin(), f.end());
  }
  return out;
}

/// Segments and featurizes a recording. Windows without a majority label
/// are dropped; the surviving windows keep their chronological index,
/// offset by `first_index`.
inline FeatureDataset featurize(const Recording& rec, double window_seconds, double overlap_fraction,
                                std::size_t first_index = 0) {
  FeatureDataset ds;
  ds.user_id = rec.user_id;
  const auto raw = segment(rec, window_seconds, overlap_fraction);
  for (std::size_t k = 0; k < raw.size(); ++k) {
    if (!raw[k].label) continue;
    ds.windows.push_back({window_features(rec, raw[k]), raw[k].label, first_index + k});
  }
  return ds;
}

inline MaxAbsScaler fit_maxabs(const FeatureDataset& ds) {
  if (ds.empty()) throw Error("empty dataset", "cannot fit a scaler on no windows");
  MaxAbsScaler s;
  s.scale.assign(ds.dim(), 0.0);
  for (const auto& w : ds.windows) {
    if (w.features.size() != s.scale.size()) throw Error("dimension mismatch");
    for (std::size_t j = 0; j < s.scale.size(); ++j) s.scale[j] = std::max(s.scale[j], std::abs(w.features[j]));
  }
  for (double& v : s.scale)
    if (v == 0.0) v = 1.0;
  return s;
}

inline FeatureDataset apply_scaler(const FeatureDataset& ds, const MaxAbsScaler& scaler) {
  FeatureDataset out = ds;
  for (auto& w : out.windows) {
    if (w.features.size() != scaler.scale.size())
      throw Error("scaler mismatch", "feature dimension differs from scaler dimension");
    for (std::size_t j = 0; j < w.features.size(); ++j) w.features[j] /= scaler.scale[j];
  }
  out.scaler = scaler;
  return out;
}

/// Fits a scaler on `ds` unless `reference` is given, then applies it.
inline FeatureDataset maxabs_fit_apply(const FeatureDataset& ds,
                                       const std::optional<MaxAbsScaler>& reference = std::nullopt) {
  if (ds.empty()) throw Error("empty dataset", "cannot scale an empty dataset");
  return apply_scaler(ds, reference ? *reference : fit_maxabs(ds));
}

}  // namespace trot
