#pragma once

// Synthetic cross-user benchmark with known (class, order) Gaussian structure.
//
// State means sit on a grid: class c contributes class_separation along
// axis c, and its k-th state contributes state_separation along axis
// C + ((c + k) mod N) (indices wrap modulo the feature dimension). The
// state axis depends on the class, so the layout is not a product of a
// class grid and a state grid. Windows are emitted in bouts: every round
// visits each class once for bout_length windows, and within a bout the
// state follows the cyclic chain 0, 1, ..., N-1, 0, ...

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trot/dataset.hpp"
#include "trot/error.hpp"
#include "trot/hmm.hpp"

namespace trot {

struct SynthSpec {
  int n_classes = 4;
  int n_states = 4;
  int windows_per_class = 200;
  int feature_dim = 8;
  double class_separation = 2.0;
  double state_separation = 2.0;
  /// Translation of every (class, order) state of the target user, rows in
  /// canonical (class, order) order. Empty means no shift.
  Eigen::MatrixXd user_shift;
  double noise_std = 0.1;
  std::uint64_t seed = 7;
  /// Windows per bout; 0 selects 5 * n_states.
  int bout_length = 0;

  int state_count() const { return n_classes * n_states; }
  int effective_bout() const { return bout_length > 0 ? bout_length : 5 * n_states; }

  void validate() const {
    if (n_classes < 1 || n_states < 1 || windows_per_class < 1 || feature_dim < 1)
      throw Error("invalid synth spec", "classes, states, windows and dim must be >= 1");
    if (!(noise_std > 0.0)) throw Error("invalid synth spec", "noise_std must be > 0");
    if (bout_length < 0) throw Error("invalid synth spec", "bout_length must be >= 0");
    if (user_shift.size() != 0 &&
        (user_shift.rows() != state_count() || user_shift.cols() != feature_dim))
      throw Error("invalid synth spec", "user_shift must be (C*N) x dim");
  }
};

/// Ground-truth state means of the unshifted user, (class, order) rows.
inline Eigen::MatrixXd base_means(const SynthSpec& spec) {
  spec.validate();
  const int c_n = spec.n_classes, n = spec.n_states, d = spec.feature_dim;
  Eigen::MatrixXd mu = Eigen::MatrixXd::Zero(spec.state_count(), d);
  for (int c = 0; c < c_n; ++c)
    for (int k = 0; k < n; ++k) {
      mu(c * n + k, c % d) += spec.class_separation;
      mu(c * n + k, (c_n + (c + k) % n) % d) += spec.state_separation;
    }
  return mu;
}

/// Shift that moves target state (c, k) a fraction of the way towards the
/// source state (c + offset, k - offset). With the default layout the decoy
/// shares the state axis of (c, k), so it is the nearest source state of a
/// different class while carrying a different temporal order.
inline Eigen::MatrixXd decoy_shift(const SynthSpec& spec, double fraction = 0.7, int offset = 1) {
  const Eigen::MatrixXd mu = base_means(spec);
  const int c_n = spec.n_classes, n = spec.n_states;
  Eigen::MatrixXd shift(mu.rows(), mu.cols());
  for (int c = 0; c < c_n; ++c)
    for (int k = 0; k < n; ++k) {
      const int dc = ((c + offset) % c_n + c_n) % c_n;
      const int dk = ((k - offset) % n + n) % n;
      shift.row(c * n + k) = fraction * (mu.row(dc * n + dk) - mu.row(c * n + k));
    }
  return shift;
}

/// Independent Gaussian translation per state with expected norm ~ scale.
inline Eigen::MatrixXd random_shift(const SynthSpec& spec, double scale, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale / std::sqrt(static_cast<double>(spec.feature_dim)));
  Eigen::MatrixXd shift(spec.state_count(), spec.feature_dim);
  for (Eigen::Index i = 0; i < shift.rows(); ++i)
    for (Eigen::Index j = 0; j < shift.cols(); ++j) shift(i, j) = normal(rng);
  return shift;
}

struct SynthUser {
  FeatureDataset data;
  TemporalAtlas truth;
  std::vector<StateKey> states;  ///< true state of every window
};

/// Draws one user's chronological windows around `means`.
inline SynthUser generate_user(const SynthSpec& spec, const Eigen::MatrixXd& means, const std::string& user_id,
                               std::uint64_t stream) {
  spec.validate();
  if (means.rows() != spec.state_count() || means.cols() != spec.feature_dim)
    throw Error("invalid synth spec", "means must be (C*N) x dim");
  std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> noise(0.0, spec.noise_std);

  SynthUser out;
  out.data.user_id = user_id;
  out.truth.user_id = user_id;
  out.truth.n_states = spec.n_states;
  for (int c = 0; c < spec.n_classes; ++c)
    for (int k = 0; k < spec.n_states; ++k) {
      GaussianState s;
      s.class_id = c;
      s.order = k + 1;
      for (int j = 0; j < spec.feature_dim; ++j) s.mean.push_back(means(c * spec.n_states + k, j));
      s.variance.assign(static_cast<std::size_t>(spec.feature_dim), spec.noise_std * spec.noise_std);
      out.truth.states.push_back(std::move(s));
    }
  out.truth.weights.assign(out.truth.size(), 1.0 / static_cast<double>(out.truth.size()));

  const int bout = spec.effective_bout();
  std::vector<int> emitted(static_cast<std::size_t>(spec.n_classes), 0);
  std::size_t index = 0;
  bool any = true;
  while (any) {
    any = false;
    for (int c = 0; c < spec.n_classes; ++c) {
      const int left = spec.windows_per_class - emitted[static_cast<std::size_t>(c)];
      const int len = std::min(bout, left);
      for (int t = 0; t < len; ++t) {
        const int k = t % spec.n_states;
        FeatureWindow w;
        w.label = c;
        w.window_index = index++;
        w.features.resize(static_cast<std::size_t>(spec.feature_dim));
        for (int j = 0; j < spec.feature_dim; ++j)
          w.features[static_cast<std::size_t>(j)] = means(c * spec.n_states + k, j) + noise(rng);
        out.data.windows.push_back(std::move(w));
        out.states.push_back({c, k + 1});
      }
      emitted[static_cast<std::size_t>(c)] += len;
      if (len > 0) any = true;
    }
  }
  return out;
}

struct SynthPair {
  SynthUser source;
  SynthUser target;
};

/// Source user at the base means; target user at base means + user_shift.
inline SynthPair generate_pair(const SynthSpec& spec) {
  const Eigen::MatrixXd mu = base_means(spec);
  const Eigen::MatrixXd shifted = spec.user_shift.size() == 0 ? mu : Eigen::MatrixXd(mu + spec.user_shift);
  return {generate_user(spec, mu, "source", 0), generate_user(spec, shifted, "target", 1)};
}

}  // namespace trot
