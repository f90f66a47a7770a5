#pragma once

// Per-activity temporal sub-state extraction with a left-to-right Gaussian
// HMM and assembly of the per-user state atlas.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trot/dataset.hpp"
#include "trot/error.hpp"

namespace trot {

inline constexpr double kVarianceFloor = 1e-6;

enum class HmmMode { deterministic, em };

inline std::string to_string(HmmMode m) { return m == HmmMode::em ? "em" : "deterministic"; }

inline HmmMode parse_hmm_mode(const std::string& s) {
  if (s == "deterministic") return HmmMode::deterministic;
  if (s == "em") return HmmMode::em;
  throw Error("invalid argument", "unknown hmm mode '" + s + "'");
}

/// (activity class, temporal order); order is 1-based.
struct StateKey {
  int class_id = 0;
  int order = 1;
  auto operator<=>(const StateKey&) const = default;
};

struct GaussianState {
  std::vector<double> mean;
  std::vector<double> variance;  ///< diagonal covariance
  int class_id = 0;
  int order = 1;

  StateKey key() const { return {class_id, order}; }
};

struct ActivityHMM {
  std::vector<GaussianState> states;  ///< temporal order
  Eigen::MatrixXd transition;         ///< row-stochastic N x N
  std::size_t initial_state = 0;
  bool cyclic = true;
  /// Log-likelihood after initialization and after every EM iteration
  /// (em mode); a single entry in deterministic mode.
  std::vector<double> log_likelihood_trace;
};

struct TemporalAtlas {
  std::vector<GaussianState> states;  ///< (class asc, order asc)
  std::vector<double> weights;
  std::string user_id;
  int n_states = 0;
  HmmMode mode = HmmMode::deterministic;

  std::size_t size() const noexcept { return states.size(); }
  std::size_t dim() const noexcept { return states.empty() ? 0 : states.front().mean.size(); }

  Eigen::MatrixXd means() const {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(size()), static_cast<Eigen::Index>(dim()));
    for (std::size_t i = 0; i < size(); ++i)
      for (std::size_t j = 0; j < dim(); ++j)
        m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = states[i].mean[j];
    return m;
  }

  Eigen::VectorXd weight_vector() const {
    return Eigen::Map<const Eigen::VectorXd>(weights.data(), static_cast<Eigen::Index>(weights.size()));
  }

  std::optional<std::size_t> index_of(StateKey key) const {
    for (std::size_t i = 0; i < states.size(); ++i)
      if (states[i].key() == key) return i;
    return std::nullopt;
  }
};

/// Splits chronologically ordered windows into maximal runs of consecutive
/// window_index values. Returns [begin, end) positions into `windows`.
inline std::vector<std::pair<std::size_t, std::size_t>> contiguous_runs(std::span<const FeatureWindow> windows) {
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  std::size_t begin = 0;
  for (std::size_t i = 1; i <= windows.size(); ++i) {
    if (i == windows.size() || windows[i].window_index != windows[i - 1].window_index + 1) {
      if (i > begin) runs.emplace_back(begin, i);
      begin = i;
    }
  }
  return runs;
}

/// Runs used for state assignment: maximal runs, with runs shorter than
/// N pooled with their neighbours until each holds at least N windows (a
/// short tail joins the previous run).
inline std::vector<std::pair<std::size_t, std::size_t>> state_runs(std::span<const FeatureWindow> windows,
                                                                   int n_states) {
  const auto n = static_cast<std::size_t>(std::max(n_states, 1));
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::optional<std::pair<std::size_t, std::size_t>> pending;
  for (const auto& run : contiguous_runs(windows)) {
    auto cur = pending ? std::pair{pending->first, run.second} : run;
    if (cur.second - cur.first >= n) {
      out.push_back(cur);
      pending.reset();
    } else {
      pending = cur;
    }
  }
  if (pending) {
    if (out.empty())
      out.push_back(*pending);
    else
      out.back().second = pending->second;
  }
  return out;
}

namespace detail {

inline void check_class_windows(std::span<const FeatureWindow> windows, int n_states) {
  if (n_states < 1) throw Error("invalid argument", "n_states must be >= 1");
  if (windows.size() < static_cast<std::size_t>(n_states))
    throw Error("insufficient class data",
                std::to_string(windows.size()) + " windows for " + std::to_string(n_states) + " states");
  const std::size_t d = windows.front().features.size();
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (windows[i].features.size() != d) throw Error("dimension mismatch");
    if (i > 0 && windows[i].window_index <= windows[i - 1].window_index)
      throw Error("unordered windows", "class windows must be chronological");
  }
}

/// State path forced by the fixed start and a_{i,i+1} = 1: the counter
/// restarts at every run boundary. Non-cyclic runs are cut into N
/// consecutive segments of near-equal length.
inline std::vector<int> deterministic_path(std::span<const FeatureWindow> windows, int n_states, bool cyclic) {
  std::vector<int> path(windows.size(), 0);
  for (const auto& [b, e] : state_runs(windows, n_states)) {
    const std::size_t len = e - b;
    for (std::size_t t = 0; t < len; ++t) {
      if (cyclic)
        path[b + t] = static_cast<int>(t % static_cast<std::size_t>(n_states));
      else if (len >= static_cast<std::size_t>(n_states))
        path[b + t] = static_cast<int>(t * static_cast<std::size_t>(n_states) / len);
      else
        path[b + t] = static_cast<int>(t);
    }
  }
  return path;
}

inline void require_all_states(std::span<const int> path, int n_states) {
  std::vector<bool> seen(static_cast<std::size_t>(n_states), false);
  for (int s : path) seen[static_cast<std::size_t>(s)] = true;
  for (int s = 0; s < n_states; ++s)
    if (!seen[static_cast<std::size_t>(s)])
      throw Error("empty state", "state " + std::to_string(s) + " received no windows");
}

/// Hard-assignment MLE of diagonal Gaussians.
inline std::vector<GaussianState> gaussians_from_path(std::span<const FeatureWindow> windows,
                                                      std::span<const int> path, int n_states) {
  const std::size_t d = windows.front().features.size();
  std::vector<GaussianState> states(static_cast<std::size_t>(n_states));
  std::vector<std::size_t> counts(states.size(), 0);
  for (auto& s : states) {
    s.mean.assign(d, 0.0);
    s.variance.assign(d, 0.0);
  }
  for (std::size_t t = 0; t < windows.size(); ++t) {
    auto& s = states[static_cast<std::size_t>(path[t])];
    counts[static_cast<std::size_t>(path[t])]++;
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += windows[t].features[j];
  }
  for (std::size_t k = 0; k < states.size(); ++k)
    for (double& v : states[k].mean) v /= static_cast<double>(counts[k]);
  for (std::size_t t = 0; t < windows.size(); ++t) {
    auto& s = states[static_cast<std::size_t>(path[t])];
    for (std::size_t j = 0; j < d; ++j) {
      const double dev = windows[t].features[j] - s.mean[j];
      s.variance[j] += dev * dev;
    }
  }
  for (std::size_t k = 0; k < states.size(); ++k) {
    states[k].order = static_cast<int>(k) + 1;
    for (double& v : states[k].variance) v = std::max(v / static_cast<double>(counts[k]), kVarianceFloor);
  }
  return states;
}

/// Support of the transition matrix: self and next state (next wraps when cyclic).
inline Eigen::MatrixXd transition_support(int n, bool cyclic) {
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    s(i, i) = 1.0;
    if (i + 1 < n) s(i, i + 1) = 1.0;
    else if (cyclic) s(i, 0) = 1.0;
  }
  return s;
}

/// Deterministic chain: a_{i,i+1 mod N} = 1.
inline Eigen::MatrixXd deterministic_transition(int n, bool cyclic) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    if (i + 1 < n) a(i, i + 1) = 1.0;
    else if (cyclic) a(i, 0) = 1.0;
    else a(i, i) = 1.0;
  }
  return a;
}

/// log N(x | mean, diag(var)) for every (t, state).
inline Eigen::MatrixXd log_emissions(std::span<const FeatureWindow> windows, std::size_t begin, std::size_t end,
                                     const std::vector<GaussianState>& states) {
  constexpr double kLog2Pi = 1.8378770664093453;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(end - begin), static_cast<Eigen::Index>(states.size()));
  for (std::size_t k = 0; k < states.size(); ++k) {
    const auto& s = states[k];
    double log_norm = 0.0;
    for (double v : s.variance) log_norm += std::log(v) + kLog2Pi;
    for (std::size_t t = begin; t < end; ++t) {
      double q = 0.0;
      for (std::size_t j = 0; j < s.mean.size(); ++j) {
        const double dev = windows[t].features[j] - s.mean[j];
        q += dev * dev / s.variance[j];
      }
      out(static_cast<Eigen::Index>(t - begin), static_cast<Eigen::Index>(k)) = -0.5 * (log_norm + q);
    }
  }
  return out;
}

/// Accumulated sufficient statistics of one E-step.
struct EStep {
  double log_likelihood = 0.0;
  Eigen::MatrixXd occupancy;    ///< T x N posterior state probabilities
  Eigen::MatrixXd transitions;  ///< N x N expected transition counts
};

inline double log_sum_exp(const Eigen::Ref<const Eigen::VectorXd>& v) {
  const double m = v.maxCoeff();
  if (m == -std::numeric_limits<double>::infinity()) return m;
  return m + std::log((v.array() - m).exp().sum());
}

inline Eigen::MatrixXd log_of(const Eigen::MatrixXd& a) {
  return a.unaryExpr([](double v) { return v > 0.0 ? std::log(v) : -std::numeric_limits<double>::infinity(); });
}

/// Log-space forward-backward over every run, start fixed at state 0.
inline EStep forward_backward(std::span<const FeatureWindow> windows, const std::vector<GaussianState>& states,
                              const Eigen::MatrixXd& a) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  const auto n = static_cast<Eigen::Index>(states.size());
  const Eigen::MatrixXd loga = log_of(a);
  EStep out;
  out.occupancy = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(windows.size()), n);
  out.transitions = Eigen::MatrixXd::Zero(n, n);
  for (const auto& [b, e] : state_runs(windows, static_cast<int>(n))) {
    const Eigen::MatrixXd loge = log_emissions(windows, b, e, states);
    const Eigen::Index len = loge.rows();
    Eigen::MatrixXd la = Eigen::MatrixXd::Constant(len, n, kNegInf);
    Eigen::MatrixXd lb = Eigen::MatrixXd::Zero(len, n);
    la(0, 0) = loge(0, 0);
    for (Eigen::Index t = 1; t < len; ++t)
      for (Eigen::Index j = 0; j < n; ++j)
        la(t, j) = loge(t, j) + log_sum_exp(la.row(t - 1).transpose() + loga.col(j));
    for (Eigen::Index t = len - 2; t >= 0; --t)
      for (Eigen::Index i = 0; i < n; ++i)
        lb(t, i) = log_sum_exp(loga.row(i).transpose() + loge.row(t + 1).transpose() + lb.row(t + 1).transpose());
    const double ll = log_sum_exp(la.row(len - 1).transpose());
    if (!std::isfinite(ll)) throw Error("numerical failure", "non-finite log-likelihood");
    out.log_likelihood += ll;
    for (Eigen::Index t = 0; t < len; ++t)
      out.occupancy.row(static_cast<Eigen::Index>(b) + t) = (la.row(t) + lb.row(t)).array().unaryExpr(
          [ll](double v) { return std::exp(v - ll); }).matrix();
    for (Eigen::Index t = 0; t + 1 < len; ++t)
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
          if (loga(i, j) > kNegInf)
            out.transitions(i, j) += std::exp(la(t, i) + loga(i, j) + loge(t + 1, j) + lb(t + 1, j) - ll);
  }
  if (!std::isfinite(out.log_likelihood)) throw Error("numerical failure", "non-finite log-likelihood");
  return out;
}

/// Log-likelihood of the windows along a fixed state path.
inline double path_log_likelihood(std::span<const FeatureWindow> windows, const std::vector<GaussianState>& states,
                                  std::span<const int> path) {
  const Eigen::MatrixXd loge = log_emissions(windows, 0, windows.size(), states);
  double ll = 0.0;
  for (std::size_t t = 0; t < path.size(); ++t) ll += loge(static_cast<Eigen::Index>(t), path[t]);
  if (!std::isfinite(ll)) throw Error("numerical failure", "non-finite log-likelihood");
  return ll;
}

/// Most likely state path under (states, a), start fixed at state 0.
inline std::vector<int> viterbi(std::span<const FeatureWindow> windows, const std::vector<GaussianState>& states,
                                const Eigen::MatrixXd& a) {
  const auto n = static_cast<Eigen::Index>(states.size());
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  const Eigen::MatrixXd loga = log_of(a);
  std::vector<int> path(windows.size(), 0);
  for (const auto& [b, e] : state_runs(windows, static_cast<int>(n))) {
    const Eigen::MatrixXd loge = log_emissions(windows, b, e, states);
    const Eigen::Index len = loge.rows();
    Eigen::MatrixXd score = Eigen::MatrixXd::Constant(len, n, kNegInf);
    Eigen::MatrixXi back = Eigen::MatrixXi::Zero(len, n);
    score(0, 0) = loge(0, 0);
    for (Eigen::Index t = 1; t < len; ++t) {
      for (Eigen::Index j = 0; j < n; ++j) {
        double best = kNegInf;
        int arg = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
          const double s = score(t - 1, i) + loga(i, j);
          if (s > best) {
            best = s;
            arg = static_cast<int>(i);
          }
        }
        score(t, j) = best + loge(t, j);
        back(t, j) = arg;
      }
    }
    Eigen::Index state = 0;
    score.row(len - 1).maxCoeff(&state);
    for (Eigen::Index t = len - 1; t >= 0; --t) {
      path[b + static_cast<std::size_t>(t)] = static_cast<int>(state);
      if (t > 0) state = back(t, state);
    }
  }
  return path;
}

struct HmmFit {
  ActivityHMM hmm;
  std::vector<int> path;
};

inline HmmFit fit_and_assign(std::span<const FeatureWindow> windows, int n_states, HmmMode mode, bool cyclic,
                             int class_id) {
  check_class_windows(windows, n_states);
  HmmFit fit;
  fit.hmm.cyclic = cyclic;
  fit.path = deterministic_path(windows, n_states, cyclic);
  require_all_states(fit.path, n_states);
  fit.hmm.states = gaussians_from_path(windows, fit.path, n_states);

  if (mode == HmmMode::deterministic) {
    fit.hmm.transition = deterministic_transition(n_states, cyclic);
    fit.hmm.log_likelihood_trace.push_back(path_log_likelihood(windows, fit.hmm.states, fit.path));
  } else {
    constexpr int kMaxIter = 100;
    constexpr double kMinGain = 1e-6;
    constexpr double kInitialSelf = 0.1;
    const Eigen::MatrixXd support = transition_support(n_states, cyclic);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n_states, n_states);
    for (int i = 0; i < n_states; ++i) {
      const double off = support.row(i).sum() - 1.0;  // number of non-self successors
      for (int j = 0; j < n_states; ++j) {
        if (support(i, j) == 0.0) continue;
        a(i, j) = (i == j) ? (off > 0 ? kInitialSelf : 1.0) : (1.0 - kInitialSelf) / off;
      }
    }
    auto& states = fit.hmm.states;
    const std::size_t d = windows.front().features.size();
    EStep est = forward_backward(windows, states, a);
    fit.hmm.log_likelihood_trace.push_back(est.log_likelihood);
    for (int iter = 0; iter < kMaxIter; ++iter) {
      // M-step on the restricted support; rows with no expected exits keep
      // their previous values.
      for (int i = 0; i < n_states; ++i) {
        const double row = est.transitions.row(i).sum();
        if (row > 0.0) a.row(i) = est.transitions.row(i) / row;
      }
      for (int k = 0; k < n_states; ++k) {
        const double mass = est.occupancy.col(k).sum();
        if (!(mass > 0.0)) continue;
        auto& s = states[static_cast<std::size_t>(k)];
        std::vector<double> mean(d, 0.0), var(d, 0.0);
        for (std::size_t t = 0; t < windows.size(); ++t) {
          const double g = est.occupancy(static_cast<Eigen::Index>(t), k);
          for (std::size_t j = 0; j < d; ++j) mean[j] += g * windows[t].features[j];
        }
        for (double& v : mean) v /= mass;
        for (std::size_t t = 0; t < windows.size(); ++t) {
          const double g = est.occupancy(static_cast<Eigen::Index>(t), k);
          for (std::size_t j = 0; j < d; ++j) {
            const double dev = windows[t].features[j] - mean[j];
            var[j] += g * dev * dev;
          }
        }
        for (double& v : var) v = std::max(v / mass, kVarianceFloor);
        s.mean = std::move(mean);
        s.variance = std::move(var);
      }
      const double previous = est.log_likelihood;
      est = forward_backward(windows, states, a);
      fit.hmm.log_likelihood_trace.push_back(est.log_likelihood);
      if (est.log_likelihood - previous < kMinGain) break;
    }
    fit.hmm.transition = a;
    fit.path = viterbi(windows, states, a);
    require_all_states(fit.path, n_states);
  }
  for (auto& s : fit.hmm.states) s.class_id = class_id;
  return fit;
}

}  // namespace detail

/// Per-window state index (0-based) of one activity's chronological windows.
inline std::vector<int> assign_states(std::span<const FeatureWindow> class_windows, int n_states,
                                      HmmMode mode = HmmMode::deterministic, bool cyclic = true) {
  return detail::fit_and_assign(class_windows, n_states, mode, cyclic, 0).path;
}

inline ActivityHMM fit_activity_hmm(std::span<const FeatureWindow> class_windows, int n_states,
                                    HmmMode mode = HmmMode::deterministic, bool cyclic = true, int class_id = 0) {
  return detail::fit_and_assign(class_windows, n_states, mode, cyclic, class_id).hmm;
}

struct AtlasOptions {
  int n_states = 4;
  HmmMode mode = HmmMode::deterministic;
  /// Classes listed here use the given cyclic flag; all others are cyclic.
  std::map<int, bool> cyclic_override;
};

struct AtlasFit {
  TemporalAtlas atlas;
  /// Per dataset window; absent for unlabeled windows.
  std::vector<std::optional<StateKey>> assignment;
};

/// Fits one HMM per class in `classes` (grouped by window label) and stacks
/// the states in (class, order) order with uniform weights.
inline AtlasFit build_atlas(const FeatureDataset& ds, const std::vector<int>& classes,
                            const AtlasOptions& options = {}) {
  if (classes.empty()) throw Error("class absent", "no classes requested");
  AtlasFit out;
  out.atlas.user_id = ds.user_id;
  out.atlas.n_states = options.n_states;
  out.atlas.mode = options.mode;
  out.assignment.assign(ds.size(), std::nullopt);

  std::vector<int> sorted = classes;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

  for (int c : sorted) {
    std::vector<FeatureWindow> members;
    std::vector<std::size_t> positions;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (ds.windows[i].label == c) {
        members.push_back(ds.windows[i]);
        positions.push_back(i);
      }
    }
    if (members.empty()) throw Error("class absent", "class " + std::to_string(c) + " has no windows");
    const auto it = options.cyclic_override.find(c);
    const bool cyclic = it == options.cyclic_override.end() ? true : it->second;
    auto fit = detail::fit_and_assign(members, options.n_states, options.mode, cyclic, c);
    for (auto& s : fit.hmm.states) out.atlas.states.push_back(std::move(s));
    for (std::size_t t = 0; t < members.size(); ++t)
      out.assignment[positions[t]] = StateKey{c, fit.path[t] + 1};
  }
  out.atlas.weights.assign(out.atlas.size(), 1.0 / static_cast<double>(out.atlas.size()));
  return out;
}

inline AtlasFit build_atlas(const FeatureDataset& ds, const AtlasOptions& options = {}) {
  return build_atlas(ds, classes_of(ds), options);
}

}  // namespace trot
