#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trot/error.hpp"

namespace trot {

/// One windowed observation. `window_index` is the chronological position
/// of the window inside the user's stream; gaps mark dropped windows or
/// recording boundaries.
struct FeatureWindow {
  std::vector<double> features;
  std::optional<int> label;
  std::size_t window_index = 0;
};

/// Per-feature divisors mapping each column into [-1, 1].
struct MaxAbsScaler {
  std::vector<double> scale;
};

struct FeatureDataset {
  std::string user_id;
  std::vector<FeatureWindow> windows;
  std::optional<MaxAbsScaler> scaler;

  std::size_t size() const noexcept { return windows.size(); }
  bool empty() const noexcept { return windows.empty(); }
  std::size_t dim() const noexcept {
    return windows.empty() ? 0 : windows.front().features.size();
  }
};

/// Throws unless all windows share one dimension and indices strictly increase.
inline void validate(const FeatureDataset& ds) {
  const std::size_t d = ds.dim();
  for (std::size_t i = 0; i < ds.windows.size(); ++i) {
    if (ds.windows[i].features.size() != d)
      throw Error("dimension mismatch", "window " + std::to_string(i));
    if (i > 0 && ds.windows[i].window_index <= ds.windows[i - 1].window_index)
      throw Error("unordered windows", "window_index must strictly increase");
  }
}

/// Rows are windows, columns are features.
inline Eigen::MatrixXd feature_matrix(const FeatureDataset& ds) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(ds.size()),
                    static_cast<Eigen::Index>(ds.dim()));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& f = ds.windows[i].features;
    if (f.size() != ds.dim()) throw Error("dimension mismatch");
    for (std::size_t j = 0; j < f.size(); ++j)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = f[j];
  }
  return x;
}

/// Copy of `ds` whose feature vectors are the rows of `x`.
inline FeatureDataset with_features(const FeatureDataset& ds, const Eigen::MatrixXd& x) {
  if (static_cast<std::size_t>(x.rows()) != ds.size())
    throw Error("dimension mismatch", "row count differs from window count");
  FeatureDataset out = ds;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto& f = out.windows[i].features;
    f.resize(static_cast<std::size_t>(x.cols()));
    for (Eigen::Index j = 0; j < x.cols(); ++j) f[static_cast<std::size_t>(j)] = x(static_cast<Eigen::Index>(i), j);
  }
  return out;
}

/// Labels of every window; throws "unlabeled window" if any is missing.
inline std::vector<int> labels_of(const FeatureDataset& ds) {
  std::vector<int> out;
  out.reserve(ds.size());
  for (const auto& w : ds.windows) {
    if (!w.label) throw Error("unlabeled window", "index " + std::to_string(w.window_index));
    out.push_back(*w.label);
  }
  return out;
}

/// Sorted distinct labels present in the dataset.
inline std::vector<int> classes_of(const FeatureDataset& ds) {
  std::set<int> s;
  for (const auto& w : ds.windows)
    if (w.label) s.insert(*w.label);
  return {s.begin(), s.end()};
}

}  // namespace trot
