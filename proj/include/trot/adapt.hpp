#pragma once

// Turning couplings into transported source data, plus the CORAL baseline.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trot/dataset.hpp"
#include "trot/error.hpp"
#include "trot/hmm.hpp"
#include "trot/ot.hpp"

namespace trot {

/// Rows of `plan` normalized to sum to 1, then applied to `target_points`.
inline Eigen::MatrixXd barycentric_map(const Eigen::MatrixXd& plan, const Eigen::MatrixXd& target_points) {
  if (plan.cols() != target_points.rows())
    throw Error("dimension mismatch", "coupling columns do not match target points");
  const Eigen::VectorXd row_sum = plan.rowwise().sum();
  for (Index i = 0; i < row_sum.size(); ++i)
    if (!(row_sum(i) > 0.0)) throw Error("degenerate coupling row", "row " + std::to_string(i) + " has zero mass");
  return row_sum.cwiseInverse().asDiagonal() * plan * target_points;
}

struct MappedAtlas {
  std::vector<StateKey> keys;       ///< source state of each row
  Eigen::MatrixXd mapped_means;     ///< k_s x d
  Eigen::MatrixXd displacement;     ///< mapped - original source mean

  std::optional<Index> row_of(StateKey key) const {
    for (std::size_t i = 0; i < keys.size(); ++i)
      if (keys[i] == key) return static_cast<Index>(i);
    return std::nullopt;
  }
};

inline MappedAtlas barycentric_map(const Coupling& coupling, const TemporalAtlas& source, const TemporalAtlas& target) {
  if (coupling.plan.rows() != static_cast<Index>(source.size()) ||
      coupling.plan.cols() != static_cast<Index>(target.size()))
    throw Error("dimension mismatch", "coupling shape does not match atlases");
  MappedAtlas out;
  for (const auto& s : source.states) out.keys.push_back(s.key());
  out.mapped_means = barycentric_map(coupling.plan, target.means());
  out.displacement = out.mapped_means - source.means();
  return out;
}

/// Shifts every source window by the displacement of its assigned state.
inline FeatureDataset transform_samples(const FeatureDataset& source,
                                        std::span<const std::optional<StateKey>> assignment,
                                        const MappedAtlas& mapped) {
  if (assignment.size() != source.size())
    throw Error("dimension mismatch", "assignment length differs from window count");
  FeatureDataset out = source;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!assignment[i]) throw Error("unassigned window", "window " + std::to_string(source.windows[i].window_index));
    const auto row = mapped.row_of(*assignment[i]);
    if (!row) throw Error("unassigned window", "state not present in the mapped atlas");
    auto& f = out.windows[i].features;
    if (static_cast<Index>(f.size()) != mapped.displacement.cols()) throw Error("dimension mismatch");
    for (std::size_t j = 0; j < f.size(); ++j) f[j] += mapped.displacement(*row, static_cast<Index>(j));
  }
  return out;
}

namespace detail {

inline Eigen::MatrixXd covariance(const Eigen::MatrixXd& x) {
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - mean;
  const double denom = x.rows() > 1 ? static_cast<double>(x.rows() - 1) : 1.0;
  return centered.transpose() * centered / denom;
}

/// S^p for symmetric positive definite S.
inline Eigen::MatrixXd spd_power(const Eigen::MatrixXd& s, double p) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
  if (eig.info() != Eigen::Success) throw Error("degenerate covariance", "eigen decomposition failed");
  const Eigen::VectorXd ev = eig.eigenvalues();
  if (!ev.allFinite() || ev.minCoeff() <= 1e-12)
    throw Error("degenerate covariance", "covariance not positive definite after ridge");
  return eig.eigenvectors() * ev.array().pow(p).matrix().asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace detail

inline constexpr double kCoralRidge = 1e-3;

/// CORAL: whiten source features with the ridge-regularized source
/// covariance, then re-color with the target covariance.
inline FeatureDataset coral_align(const FeatureDataset& source, const FeatureDataset& target,
                                  double ridge = kCoralRidge) {
  if (source.empty() || target.empty()) throw Error("empty dataset", "CORAL needs both domains");
  if (source.dim() != target.dim()) throw Error("dimension mismatch", "source and target dimensions differ");
  const Eigen::MatrixXd xs = feature_matrix(source);
  const Eigen::MatrixXd xt = feature_matrix(target);
  const auto d = xs.cols();
  const Eigen::MatrixXd cs = detail::covariance(xs) + ridge * Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd ct = detail::covariance(xt) + ridge * Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd transform = detail::spd_power(cs, -0.5) * detail::spd_power(ct, 0.5);
  return with_features(source, xs * transform);
}

}  // namespace trot
