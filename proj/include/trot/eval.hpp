#pragma once

// Cross-user evaluation protocol: 1-NN classification, the chronological
// validation/test split of the target user, validation-driven grid search
// and the method dispatch for NA, TD, OT, OTDA, CORAL and TROT.

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trot/adapt.hpp"
#include "trot/csv.hpp"
#include "trot/dataset.hpp"
#include "trot/error.hpp"
#include "trot/hmm.hpp"
#include "trot/ot.hpp"
#include "trot/preprocess.hpp"

namespace trot {

enum class Method { na, td, ot, otda, coral, trot };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::na: return "na";
    case Method::td: return "td";
    case Method::ot: return "ot";
    case Method::otda: return "otda";
    case Method::coral: return "coral";
    case Method::trot: return "trot";
  }
  return "unknown";
}

inline Method parse_method(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  for (Method m : {Method::na, Method::td, Method::ot, Method::otda, Method::coral, Method::trot})
    if (to_string(m) == s) return m;
  throw Error("invalid argument", "unknown method '" + s + "'");
}

// ---------------------------------------------------------------------------
// 1-NN

/// Label of the Euclidean-nearest training row for every query row; ties go
/// to the lowest training index.
inline std::vector<int> knn1_classify(const Eigen::MatrixXd& train, std::span<const int> train_labels,
                                      const Eigen::MatrixXd& query) {
  if (train.rows() == 0) throw Error("empty dataset", "1-NN needs at least one training window");
  if (static_cast<std::size_t>(train.rows()) != train_labels.size())
    throw Error("dimension mismatch", "training labels do not match training rows");
  if (query.rows() > 0 && train.cols() != query.cols())
    throw Error("dimension mismatch", "query and training dimensions differ");
  const Eigen::VectorXd train_sq = train.rowwise().squaredNorm();
  const Eigen::MatrixXd cross = query * train.transpose();
  std::vector<int> out(static_cast<std::size_t>(query.rows()));
  for (Index q = 0; q < query.rows(); ++q) {
    Index best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (Index t = 0; t < train.rows(); ++t) {
      // ||q||^2 is constant per query and irrelevant to the argmin.
      const double d = train_sq(t) - 2.0 * cross(q, t);
      if (d < best_d) {
        best_d = d;
        best = t;
      }
    }
    out[static_cast<std::size_t>(q)] = train_labels[static_cast<std::size_t>(best)];
  }
  return out;
}

inline std::vector<int> knn1_classify(const FeatureDataset& train, const FeatureDataset& query) {
  if (train.empty()) throw Error("empty dataset", "1-NN needs at least one training window");
  if (!query.empty() && train.dim() != query.dim())
    throw Error("dimension mismatch", "query and training dimensions differ");
  const auto labels = labels_of(train);
  return knn1_classify(feature_matrix(train), labels, feature_matrix(query));
}

// ---------------------------------------------------------------------------
// Protocol pieces

struct SplitDataset {
  FeatureDataset validation;
  FeatureDataset test;
};

/// First floor(n/2) windows validate, the rest test.
inline SplitDataset temporal_split(const FeatureDataset& target) {
  if (target.size() < 2) throw Error("insufficient data", "temporal split needs at least 2 windows");
  SplitDataset s;
  s.validation.user_id = s.test.user_id = target.user_id;
  s.validation.scaler = s.test.scaler = target.scaler;
  const std::size_t half = target.size() / 2;
  s.validation.windows.assign(target.windows.begin(), target.windows.begin() + static_cast<std::ptrdiff_t>(half));
  s.test.windows.assign(target.windows.begin() + static_cast<std::ptrdiff_t>(half), target.windows.end());
  return s;
}

struct HyperGrid {
  std::vector<double> lambdas{0.01, 0.1, 1.0};
  std::vector<double> etas{0.0, 0.1, 1.0};
  std::vector<double> taus{0.0, 0.1, 1.0, 10.0};
  std::vector<int> n_states{2, 4};
  OrderMode order_mode = OrderMode::mismatched;
  HmmMode hmm_mode = HmmMode::deterministic;
};

struct HyperChoice {
  std::optional<double> lambda, eta, tau;
  std::optional<int> n_states;
};

struct GridPoint {
  HyperChoice hyper;
  std::optional<double> validation_accuracy;
  std::optional<std::string> error;
};

struct TaskSpec {
  std::string source_user;
  std::string target_user;
  Method method = Method::trot;
  HyperGrid grid;
  std::uint64_t seed = 0;
};

struct Prediction {
  std::size_t window_index = 0;
  int label = 0;
  int predicted = 0;
};

struct AdaptReport {
  TaskSpec task;
  std::optional<HyperChoice> chosen;
  std::optional<double> validation_accuracy;
  std::optional<double> test_accuracy;
  std::vector<double> objective_trace;
  std::vector<GridPoint> grid;
  std::vector<Prediction> predictions;  ///< test half
  std::optional<Coupling> coupling;     ///< TROT only
  std::optional<std::string> error_code;
  std::optional<std::string> error;
  std::optional<double> seconds;
  std::size_t n_source = 0, n_validation = 0, n_test = 0;
};

struct RunOptions {
  std::size_t ot_max_samples = 500;
  int otda_gcg_iters = 10;
  bool timing = false;
  std::map<int, bool> cyclic_override;
};

inline double accuracy(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw Error("dimension mismatch", "prediction count differs");
  if (truth.empty()) throw Error("empty dataset", "no windows to score");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) correct += truth[i] == predicted[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(truth.size());
}

namespace detail {

/// Sorted subset of at most `max_count` positions, drawn uniformly.
inline std::vector<std::size_t> subsample_positions(std::size_t n, std::size_t max_count, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  if (n <= max_count) return idx;
  for (std::size_t i = 0; i < max_count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(max_count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline FeatureDataset select(const FeatureDataset& ds, const std::vector<std::size_t>& positions) {
  FeatureDataset out;
  out.user_id = ds.user_id;
  out.scaler = ds.scaler;
  for (std::size_t p : positions) out.windows.push_back(ds.windows[p]);
  return out;
}

inline FeatureDataset relabel(const FeatureDataset& ds, const std::vector<int>& labels) {
  FeatureDataset out = ds;
  for (std::size_t i = 0; i < out.size(); ++i) out.windows[i].label = labels[i];
  return out;
}

inline Eigen::MatrixXd normalized_cost(const Eigen::MatrixXd& xs, const Eigen::MatrixXd& xt) {
  Eigen::MatrixXd c = cost_matrix(xs, xt);
  const double mx = c.maxCoeff();
  if (mx > 0.0) c /= mx;
  return c;
}

/// Trains 1-NN on `train` and scores it on `eval`.
inline double score(const FeatureDataset& train, const FeatureDataset& eval) {
  return accuracy(labels_of(eval), knn1_classify(train, eval));
}

/// One hyperparameter candidate: how to build the training set for 1-NN.
/// Pseudo-classes with at least `min_count` windows. Classes the source
/// 1-NN never predicts (or predicts too rarely) get no target states.
inline std::vector<int> populated_classes(const std::vector<int>& labels, int min_count) {
  std::map<int, int> count;
  for (int l : labels) ++count[l];
  std::vector<int> out;
  for (const auto& [c, k] : count)
    if (k >= min_count) out.push_back(c);
  return out;
}

struct Candidate {
  HyperChoice hyper;
  std::vector<double> objective_trace;
  std::optional<Coupling> coupling;
  FeatureDataset train;
};

}  // namespace detail

/// Runs one method on one (source, target) pair under the validation/test
/// protocol. Module errors are captured in the report instead of thrown.
inline AdaptReport run_task(const TaskSpec& spec, const FeatureDataset& source_raw, const FeatureDataset& target_raw,
                            const RunOptions& options = {}) {
  AdaptReport report;
  report.task = spec;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    if (spec.method != Method::td && spec.source_user == spec.target_user && !spec.source_user.empty())
      throw Error("invalid task", "source and target user must differ");
    validate(source_raw);
    validate(target_raw);
    if (source_raw.empty()) throw Error("empty dataset", "source user has no windows");
    if (source_raw.dim() != target_raw.dim()) throw Error("dimension mismatch", "source and target dimensions differ");

    // Scaler fit on the source user only, applied to both users.
    const FeatureDataset source = maxabs_fit_apply(source_raw);
    const FeatureDataset target = maxabs_fit_apply(target_raw, source.scaler);
    const SplitDataset split = temporal_split(target);
    const std::vector<int> classes = classes_of(source);
    const std::vector<int> val_labels = labels_of(split.validation);
    report.n_source = source.size();
    report.n_validation = split.validation.size();
    report.n_test = split.test.size();

    std::mt19937_64 rng(spec.seed);
    std::vector<detail::Candidate> candidates;
    const auto& g = spec.grid;

    switch (spec.method) {
      case Method::na:
        candidates.push_back({{}, {}, std::nullopt, source});
        break;
      case Method::td:
        candidates.push_back({{}, {}, std::nullopt, split.validation});
        break;
      case Method::coral:
        candidates.push_back({{}, {}, std::nullopt, coral_align(source, split.validation)});
        break;
      case Method::ot:
      case Method::otda: {
        const auto src = detail::select(source, detail::subsample_positions(source.size(), options.ot_max_samples, rng));
        const auto tgt = detail::select(split.validation,
                                        detail::subsample_positions(split.validation.size(), options.ot_max_samples, rng));
        const Eigen::MatrixXd xs = feature_matrix(src), xt = feature_matrix(tgt);
        const Eigen::MatrixXd cost = detail::normalized_cost(xs, xt);
        const Eigen::VectorXd a = uniform_marginal(xs.rows()), b = uniform_marginal(xt.rows());
        OrderGroups groups;
        groups.class_groups = class_groups_from_labels(labels_of(src));
        const std::vector<double> etas = spec.method == Method::ot ? std::vector<double>{0.0} : g.etas;
        for (double lambda : g.lambdas)
          for (double eta : etas) {
            HyperChoice hc;
            hc.lambda = lambda;
            if (spec.method == Method::otda) hc.eta = eta;
            try {
              std::vector<double> trace;
              Eigen::MatrixXd plan;
              if (spec.method == Method::ot) {
                plan = sinkhorn(a, b, cost, lambda).coupling.plan;
              } else {
                TrotHyperparams h;
                h.lambda = lambda;
                h.eta = eta;
                h.gcg_iters = options.otda_gcg_iters;
                auto res = gcg_solve(a, b, cost, h, groups);
                plan = std::move(res.coupling.plan);
                trace = std::move(res.objective_trace);
              }
              candidates.push_back({hc, std::move(trace), std::nullopt, with_features(src, barycentric_map(plan, xt))});
            } catch (const Error& e) {
              report.grid.push_back({hc, std::nullopt, e.what()});
            }
          }
        break;
      }
      case Method::trot: {
        const std::vector<int> pseudo = knn1_classify(source, split.validation);
        const FeatureDataset pseudo_val = detail::relabel(split.validation, pseudo);
        for (int n_states : g.n_states) {
          AtlasOptions ao;
          ao.n_states = n_states;
          ao.mode = g.hmm_mode;
          ao.cyclic_override = options.cyclic_override;
          std::optional<AtlasFit> src_fit, tgt_fit;
          try {
            src_fit = build_atlas(source, classes, ao);
            tgt_fit = build_atlas(pseudo_val, detail::populated_classes(pseudo, n_states), ao);
          } catch (const Error& e) {
            HyperChoice hc;
            hc.n_states = n_states;
            report.grid.push_back({hc, std::nullopt, e.what()});
            continue;
          }
          const Eigen::MatrixXd cost = cost_matrix(src_fit->atlas, tgt_fit->atlas);
          const OrderGroups groups = make_order_groups(src_fit->atlas, tgt_fit->atlas);
          const Eigen::VectorXd a = src_fit->atlas.weight_vector(), b = tgt_fit->atlas.weight_vector();
          for (double lambda : g.lambdas)
            for (double eta : g.etas)
              for (double tau : g.taus) {
                HyperChoice hc{lambda, eta, tau, n_states};
                try {
                  TrotHyperparams h;
                  h.lambda = lambda;
                  h.eta = eta;
                  h.tau = tau;
                  h.order_mode = g.order_mode;
                  auto res = gcg_solve(a, b, cost, h, groups);
                  const MappedAtlas mapped = barycentric_map(res.coupling, src_fit->atlas, tgt_fit->atlas);
                  candidates.push_back({hc, std::move(res.objective_trace), std::move(res.coupling),
                                        transform_samples(source, src_fit->assignment, mapped)});
                } catch (const Error& e) {
                  report.grid.push_back({hc, std::nullopt, e.what()});
                }
              }
        }
        break;
      }
    }
    if (candidates.empty()) throw Error("no viable hyperparameters", "every grid point failed");

    // Selection on the validation half only; first best in grid order wins.
    std::size_t best = 0;
    double best_acc = -1.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      const double acc = detail::score(candidates[i].train, split.validation);
      report.grid.push_back({candidates[i].hyper, acc, std::nullopt});
      if (acc > best_acc) {
        best_acc = acc;
        best = i;
      }
    }
    auto& chosen = candidates[best];
    report.chosen = chosen.hyper;
    report.validation_accuracy = best_acc;
    report.objective_trace = chosen.objective_trace;
    report.coupling = chosen.coupling;

    const std::vector<int> truth = labels_of(split.test);
    const std::vector<int> predicted = knn1_classify(chosen.train, split.test);
    for (std::size_t i = 0; i < truth.size(); ++i)
      report.predictions.push_back({split.test.windows[i].window_index, truth[i], predicted[i]});
    report.test_accuracy = accuracy(truth, predicted);
  } catch (const Error& e) {
    report.error_code = e.code();
    report.error = e.what();
  }
  if (options.timing)
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

// ---------------------------------------------------------------------------
// Pairwise matrix

struct MatrixReport {
  std::vector<std::string> users;
  std::vector<Method> methods;
  std::vector<std::string> skipped;  ///< users without data, with reason
  std::vector<AdaptReport> rows;     ///< method-major, then directed pairs
};

/// Every ordered (source, target) pair of `users` for every method. Feature
/// CSVs are read from `<data_dir>/<user>.csv`.
inline MatrixReport run_matrix(const std::filesystem::path& data_dir, const std::vector<std::string>& users,
                               const std::vector<Method>& methods, const HyperGrid& grid = {},
                               std::uint64_t seed = 0, const RunOptions& options = {}) {
  if (users.size() < 2) throw Error("insufficient users", "a matrix run needs at least 2 users");
  MatrixReport out;
  out.methods = methods;
  std::vector<std::pair<std::string, FeatureDataset>> loaded;
  for (const auto& u : users) {
    const auto path = data_dir / (u + ".csv");
    try {
      loaded.emplace_back(u, csv::read_features(path, u));
      out.users.push_back(u);
    } catch (const Error& e) {
      out.skipped.push_back(u + ": " + e.what());
    }
  }
  for (Method m : methods)
    for (std::size_t s = 0; s < loaded.size(); ++s)
      for (std::size_t t = 0; t < loaded.size(); ++t) {
        if (s == t) continue;
        TaskSpec spec;
        spec.source_user = loaded[s].first;
        spec.target_user = loaded[t].first;
        spec.method = m;
        spec.grid = grid;
        spec.seed = seed + 1000003ULL * s + 7919ULL * t;
        out.rows.push_back(run_task(spec, loaded[s].second, loaded[t].second, options));
      }
  return out;
}

/// Users are the stems of every `*.csv` in `data_dir`, sorted.
inline std::vector<std::string> discover_users(const std::filesystem::path& data_dir) {
  std::vector<std::string> users;
  if (!std::filesystem::is_directory(data_dir)) throw Error("io error", data_dir.string() + " is not a directory");
  for (const auto& entry : std::filesystem::directory_iterator(data_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".csv") users.push_back(entry.path().stem().string());
  std::sort(users.begin(), users.end());
  return users;
}

}  // namespace trot
