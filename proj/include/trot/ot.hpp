#pragma once

// Regularized discrete optimal transport: cost matrix, entropy, group-sparse
// and temporal-order regularizers, log-stabilized Sinkhorn, and the
// generalized conditional gradient solver for the composite objective
//
//   <gamma, C> + lambda H(gamma) + eta Omega(gamma) + tau T(gamma)
//
// subject to gamma 1 = a and gamma^T 1 = b.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "trot/error.hpp"
#include "trot/hmm.hpp"

namespace trot {

using Eigen::Index;
using IndexGroups = std::vector<std::vector<Index>>;

struct Coupling {
  Eigen::MatrixXd plan;
  Eigen::VectorXd row_marginal;
  Eigen::VectorXd col_marginal;

  /// Larger of the L1 row and column marginal errors.
  double marginal_violation() const {
    const double rows = (plan.rowwise().sum() - row_marginal).cwiseAbs().sum();
    const double cols = (plan.colwise().sum().transpose() - col_marginal).cwiseAbs().sum();
    return std::max(rows, cols);
  }
};

enum class OrderMode { matched, mismatched };

inline std::string to_string(OrderMode m) { return m == OrderMode::matched ? "matched" : "mismatched"; }

inline OrderMode parse_order_mode(const std::string& s) {
  if (s == "matched") return OrderMode::matched;
  if (s == "mismatched") return OrderMode::mismatched;
  throw Error("invalid argument", "unknown order mode '" + s + "'");
}

/// Index sets used by the group regularizers.
///
/// matched_cols[i] holds the target columns whose temporal order equals the
/// order of source row i; mismatched_cols[i] is the complement. Each entry
/// of class_groups lists the source rows of one source class.
struct OrderGroups {
  IndexGroups matched_cols;
  IndexGroups mismatched_cols;
  IndexGroups class_groups;
};

/// Groups rows by label, in ascending label order.
inline IndexGroups class_groups_from_labels(std::span<const int> row_labels) {
  std::vector<int> distinct(row_labels.begin(), row_labels.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  IndexGroups groups(distinct.size());
  for (std::size_t i = 0; i < row_labels.size(); ++i) {
    const auto pos = std::lower_bound(distinct.begin(), distinct.end(), row_labels[i]) - distinct.begin();
    groups[static_cast<std::size_t>(pos)].push_back(static_cast<Index>(i));
  }
  return groups;
}

inline OrderGroups make_order_groups(std::span<const StateKey> source, std::span<const StateKey> target) {
  OrderGroups g;
  for (const auto& s : source) {
    std::vector<Index> matched, mismatched;
    for (std::size_t j = 0; j < target.size(); ++j)
      (target[j].order == s.order ? matched : mismatched).push_back(static_cast<Index>(j));
    g.matched_cols.push_back(std::move(matched));
    g.mismatched_cols.push_back(std::move(mismatched));
  }
  std::vector<int> labels;
  for (const auto& s : source) labels.push_back(s.class_id);
  g.class_groups = class_groups_from_labels(labels);
  return g;
}

inline OrderGroups make_order_groups(const TemporalAtlas& source, const TemporalAtlas& target) {
  std::vector<StateKey> s, t;
  for (const auto& st : source.states) s.push_back(st.key());
  for (const auto& st : target.states) t.push_back(st.key());
  return make_order_groups(s, t);
}

/// Squared Euclidean distance between every source row and target row.
inline Eigen::MatrixXd cost_matrix(const Eigen::MatrixXd& source_points, const Eigen::MatrixXd& target_points) {
  if (source_points.cols() != target_points.cols())
    throw Error("dimension mismatch", "source and target points differ in dimension");
  const Eigen::VectorXd sn = source_points.rowwise().squaredNorm();
  const Eigen::VectorXd tn = target_points.rowwise().squaredNorm();
  Eigen::MatrixXd c = -2.0 * source_points * target_points.transpose();
  c.colwise() += sn;
  c.rowwise() += tn.transpose();
  return c.cwiseMax(0.0);
}

inline Eigen::MatrixXd cost_matrix(const TemporalAtlas& source, const TemporalAtlas& target) {
  if (source.dim() != target.dim()) throw Error("dimension mismatch", "atlas feature dimensions differ");
  return cost_matrix(source.means(), target.means());
}

struct ValueGrad {
  double value = 0.0;
  Eigen::MatrixXd gradient;
};

inline constexpr double kLogZeroClamp = -745.0;

/// H(gamma) = sum gamma (log gamma - 1), with 0 log 0 = 0.
inline ValueGrad entropy(const Eigen::MatrixXd& gamma) {
  ValueGrad out;
  out.gradient.resize(gamma.rows(), gamma.cols());
  for (Index j = 0; j < gamma.cols(); ++j)
    for (Index i = 0; i < gamma.rows(); ++i) {
      const double g = gamma(i, j);
      if (g > 0.0) {
        const double lg = std::log(g);
        out.value += g * (lg - 1.0);
        out.gradient(i, j) = std::max(lg, kLogZeroClamp);
      } else {
        out.gradient(i, j) = kLogZeroClamp;
      }
    }
  return out;
}

inline double entropy_value(const Eigen::MatrixXd& gamma) {
  double v = 0.0;
  for (Index j = 0; j < gamma.cols(); ++j)
    for (Index i = 0; i < gamma.rows(); ++i)
      if (gamma(i, j) > 0.0) v += gamma(i, j) * (std::log(gamma(i, j)) - 1.0);
  return v;
}

/// Omega(gamma) = sum_j sum_c || gamma(rows of class c, j) ||_2.
inline ValueGrad group_sparse(const Eigen::MatrixXd& gamma, const IndexGroups& class_groups) {
  ValueGrad out;
  out.gradient = Eigen::MatrixXd::Zero(gamma.rows(), gamma.cols());
  for (Index j = 0; j < gamma.cols(); ++j)
    for (const auto& rows : class_groups) {
      double sq = 0.0;
      for (Index i : rows) sq += gamma(i, j) * gamma(i, j);
      const double norm = std::sqrt(sq);
      out.value += norm;
      if (norm > 0.0)
        for (Index i : rows) out.gradient(i, j) = gamma(i, j) / norm;
    }
  return out;
}

/// Sum over source rows of the L2 norm of gamma restricted to that row's
/// matched (matched mode) or mismatched (mismatched mode) target columns.
inline ValueGrad temporal_reg(const Eigen::MatrixXd& gamma, const OrderGroups& groups, OrderMode mode) {
  const IndexGroups& cols = mode == OrderMode::matched ? groups.matched_cols : groups.mismatched_cols;
  if (cols.size() != static_cast<std::size_t>(gamma.rows()))
    throw Error("dimension mismatch", "order groups do not match coupling rows");
  ValueGrad out;
  out.gradient = Eigen::MatrixXd::Zero(gamma.rows(), gamma.cols());
  for (Index i = 0; i < gamma.rows(); ++i) {
    double sq = 0.0;
    for (Index j : cols[static_cast<std::size_t>(i)]) sq += gamma(i, j) * gamma(i, j);
    const double norm = std::sqrt(sq);
    out.value += norm;
    if (norm > 0.0)
      for (Index j : cols[static_cast<std::size_t>(i)]) out.gradient(i, j) = gamma(i, j) / norm;
  }
  return out;
}

struct SinkhornOptions {
  int max_iters = 10000;
  double marginal_tol = 1e-8;
  double dual_tol = 1e-9;
  /// Warm-start schedule: lambda shrinks by this factor per stage from the
  /// cost range; 0 disables it.
  double anneal_factor = 0.5;
  int anneal_iters = 500;
  double anneal_tol = 1e-6;
  /// Newton steps on the dual when scaling stalls (small problems only).
  int newton_steps = 50;
  int newton_after = 1000;
};

struct SinkhornResult {
  Coupling coupling;
  int iterations = 0;
  double violation = 0.0;
  bool converged = false;
};

namespace detail {

inline void check_marginal(const Eigen::VectorXd& m, const char* name) {
  if (m.size() == 0) throw Error("invalid marginal", std::string(name) + " is empty");
  if ((m.array() <= 0.0).any() || !m.allFinite())
    throw Error("invalid marginal", std::string(name) + " must be strictly positive");
  if (std::abs(m.sum() - 1.0) > 1e-9) throw Error("invalid marginal", std::string(name) + " must sum to 1");
}

inline double row_lse(const Eigen::Ref<const Eigen::ArrayXd>& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v - m).exp().sum());
}

}  // namespace detail

namespace detail {

struct SinkhornStage {
  Eigen::MatrixXd plan;
  int iterations = 0;
  bool converged = false;
};

/// Scaling iterations on the kernel exp((f_i + g_j - C_ij) / lambda), warm
/// started from the duals (f, g), which are updated in place. Scalings are
/// absorbed into the duals whenever they grow large, and an exact
/// log-sum-exp update replaces a scaling step whose kernel products
/// underflow.
inline SinkhornStage sinkhorn_stage(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::MatrixXd& cost,
                                    double lambda, const SinkhornOptions& opt, Eigen::VectorXd& f,
                                    Eigen::VectorXd& g) {
  const Index n = cost.rows(), m = cost.cols();
  const Eigen::ArrayXd log_a = a.array().log(), log_b = b.array().log();

  auto log_update = [&] {
    for (Index i = 0; i < n; ++i)
      f(i) = lambda * (log_a(i) - row_lse((g.transpose().array() - cost.row(i).array()).transpose() / lambda));
    for (Index j = 0; j < m; ++j)
      g(j) = lambda * (log_b(j) - row_lse((f.array() - cost.col(j).array()) / lambda));
  };
  auto kernel = [&] {
    Eigen::MatrixXd k = (-cost).colwise() + f;
    k.rowwise() += g.transpose();
    return Eigen::MatrixXd((k / lambda).array().exp().matrix());
  };
  auto absorb = [&](Eigen::VectorXd& u, Eigen::VectorXd& v) {
    f += lambda * u.array().log().matrix();
    g += lambda * v.array().log().matrix();
    u.setOnes();
    v.setOnes();
  };

  log_update();
  Eigen::MatrixXd k = kernel();
  Eigen::VectorXd u = Eigen::VectorXd::Ones(n), v = Eigen::VectorXd::Ones(m);
  constexpr double kAbsorb = 1e50;
  constexpr double kTiny = 1e-300;
  constexpr int kCheckEvery = 10;

  SinkhornStage out;
  int it = 1;
  for (; it < opt.max_iters; ++it) {
    const Eigen::VectorXd kv = k * v;
    bool fallback = (kv.array() < kTiny).any() || !kv.allFinite();
    Eigen::VectorXd u_new, v_new;
    if (!fallback) {
      u_new = a.cwiseQuotient(kv);
      const Eigen::VectorXd ktu = k.transpose() * u_new;
      fallback = (ktu.array() < kTiny).any() || !ktu.allFinite();
      if (!fallback) v_new = b.cwiseQuotient(ktu);
    }
    if (fallback) {
      absorb(u, v);
      log_update();
      k = kernel();
      continue;
    }
    const double dual_change =
        lambda * std::max((u_new.array() / u.array()).log().abs().maxCoeff(),
                          (v_new.array() / v.array()).log().abs().maxCoeff());
    u = u_new;
    v = v_new;
    if (u.maxCoeff() > kAbsorb || v.maxCoeff() > kAbsorb || u.minCoeff() < 1.0 / kAbsorb ||
        v.minCoeff() < 1.0 / kAbsorb) {
      absorb(u, v);
      k = kernel();
    }
    if (it % kCheckEvery == 0 || dual_change < opt.dual_tol) {
      // Columns are exact right after the v update; rows carry the error.
      const double row_err = (u.cwiseProduct(k * v) - a).cwiseAbs().sum();
      if (!std::isfinite(row_err)) throw Error("numerical failure", "NaN in Sinkhorn iterations");
      if (row_err <= opt.marginal_tol) {
        out.converged = true;
        break;
      }
      if (dual_change < opt.dual_tol) break;
    }
  }
  out.iterations = std::min(it, opt.max_iters);
  out.plan = u.asDiagonal() * k * v.asDiagonal();
  absorb(u, v);
  return out;
}

inline Eigen::MatrixXd dual_plan(const Eigen::MatrixXd& cost, double lambda, const Eigen::VectorXd& f,
                                 const Eigen::VectorXd& g) {
  Eigen::MatrixXd z = (-cost).colwise() + f;
  z.rowwise() += g.transpose();
  return (z / lambda).array().exp().matrix();
}

/// Newton ascent on the entropic dual, started from (f, g). The last
/// column dual is pinned to remove the additive gauge.
inline bool newton_polish(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::MatrixXd& cost,
                          double lambda, double tol, int max_steps, Eigen::VectorXd& f, Eigen::VectorXd& g) {
  const Index n = cost.rows(), m = cost.cols(), k = n + m - 1;
  auto dual_value = [&](const Eigen::VectorXd& ff, const Eigen::VectorXd& gg) {
    Eigen::MatrixXd z = (-cost).colwise() + ff;
    z.rowwise() += gg.transpose();
    if ((z.array() / lambda).maxCoeff() > 700.0) return -std::numeric_limits<double>::infinity();
    return a.dot(ff) + b.dot(gg) - lambda * (z / lambda).array().exp().sum();
  };
  for (int step = 0; step < max_steps; ++step) {
    const Eigen::MatrixXd p = dual_plan(cost, lambda, f, g);
    const Eigen::VectorXd rows = p.rowwise().sum(), cols = p.colwise().sum().transpose();
    const double err = std::max((rows - a).cwiseAbs().sum(), (cols - b).cwiseAbs().sum());
    if (!std::isfinite(err)) return false;
    if (err <= tol) return true;
    Eigen::VectorXd grad(k);
    grad << a - rows, (b - cols).head(m - 1);
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(k, k);
    h.topLeftCorner(n, n).diagonal() = rows;
    h.topRightCorner(n, m - 1) = p.leftCols(m - 1);
    h.bottomLeftCorner(m - 1, n) = p.leftCols(m - 1).transpose();
    h.bottomRightCorner(m - 1, m - 1).diagonal() = cols.head(m - 1);
    h /= lambda;
    h.diagonal().array() += 1e-14 * h.diagonal().maxCoeff();
    const Eigen::VectorXd dir = h.ldlt().solve(grad);
    if (!dir.allFinite()) return false;
    const double base = dual_value(f, g);
    double t = 1.0;
    bool moved = false;
    for (int bt = 0; bt < 40; ++bt, t *= 0.5) {
      Eigen::VectorXd nf = f + t * dir.head(n), ng = g;
      ng.head(m - 1) += t * dir.tail(m - 1);
      if (dual_value(nf, ng) >= base) {
        f = std::move(nf);
        g = std::move(ng);
        moved = true;
        break;
      }
    }
    if (!moved) return false;
  }
  return false;
}

/// Dense Newton steps are only taken on problems up to this many duals.
inline constexpr Index kNewtonMaxDuals = 400;

}  // namespace detail

/// Entropic OT: argmin <gamma, C> + lambda H(gamma) under both marginals.
/// When lambda is small against the cost range, the duals are first
/// warm started along a decreasing lambda schedule.
inline SinkhornResult sinkhorn(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::MatrixXd& cost,
                               double lambda, const SinkhornOptions& opt = {}) {
  if (!(lambda > 0.0)) throw Error("invalid argument", "lambda must be > 0");
  detail::check_marginal(a, "row marginal");
  detail::check_marginal(b, "column marginal");
  if (cost.rows() != a.size() || cost.cols() != b.size())
    throw Error("dimension mismatch", "cost shape does not match marginals");
  if (!cost.allFinite()) throw Error("numerical failure", "non-finite cost");

  Eigen::VectorXd f = Eigen::VectorXd::Zero(cost.rows()), g = Eigen::VectorXd::Zero(cost.cols());
  SinkhornResult res;
  const double range = cost.maxCoeff() - cost.minCoeff();
  std::vector<double> schedule;
  for (double l = range; l > 4.0 * lambda; l *= opt.anneal_factor) schedule.push_back(l);
  if (opt.anneal_factor <= 0.0 || opt.anneal_factor >= 1.0) schedule.clear();
  SinkhornOptions warm = opt;
  warm.max_iters = opt.anneal_iters;
  warm.marginal_tol = opt.anneal_tol;
  for (double l : schedule) res.iterations += detail::sinkhorn_stage(a, b, cost, l, warm, f, g).iterations;

  const bool newton = opt.newton_steps > 0 && cost.cols() > 1 && cost.rows() + cost.cols() <= detail::kNewtonMaxDuals;
  SinkhornOptions first = opt;
  if (newton) first.max_iters = std::min(opt.max_iters, opt.newton_after);
  auto stage = detail::sinkhorn_stage(a, b, cost, lambda, first, f, g);
  res.iterations += stage.iterations;
  res.coupling.plan = std::move(stage.plan);
  if (!stage.converged && newton) {
    Eigen::VectorXd nf = f, ng = g;
    if (detail::newton_polish(a, b, cost, lambda, opt.marginal_tol, opt.newton_steps, nf, ng)) {
      res.coupling.plan = detail::dual_plan(cost, lambda, nf, ng);
      stage.converged = true;
    } else if (opt.max_iters > first.max_iters) {
      SinkhornOptions rest = opt;
      rest.max_iters = opt.max_iters - first.max_iters;
      stage = detail::sinkhorn_stage(a, b, cost, lambda, rest, f, g);
      res.iterations += stage.iterations;
      res.coupling.plan = std::move(stage.plan);
    }
  }
  res.coupling.row_marginal = a;
  res.coupling.col_marginal = b;
  if (!res.coupling.plan.allFinite()) throw Error("numerical failure", "NaN in Sinkhorn coupling");
  res.violation = res.coupling.marginal_violation();
  res.converged = stage.converged || res.violation <= opt.marginal_tol;
  return res;
}

struct ArmijoOptions {
  double sufficient_decrease = 1e-4;
  double backtrack = 0.5;
  int max_backtracks = 30;
};

struct TrotHyperparams {
  double lambda = 0.1;  ///< entropy weight, > 0
  double eta = 0.0;     ///< group-sparse weight
  double tau = 0.0;     ///< temporal-order weight
  OrderMode order_mode = OrderMode::mismatched;
  SinkhornOptions sinkhorn;
  int gcg_iters = 100;
  double gcg_rel_tol = 1e-7;
  ArmijoOptions armijo;

  void validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw Error("invalid argument", "lambda must be > 0");
    if (!(eta >= 0.0) || !std::isfinite(eta)) throw Error("invalid argument", "eta must be >= 0");
    if (!(tau >= 0.0) || !std::isfinite(tau)) throw Error("invalid argument", "tau must be >= 0");
    if (gcg_iters < 0) throw Error("invalid argument", "gcg_iters must be >= 0");
  }
};

/// Regularized objective and its (sub)gradient at gamma.
inline ValueGrad trot_objective(const Eigen::MatrixXd& gamma, const Eigen::MatrixXd& cost,
                                const TrotHyperparams& h, const OrderGroups& groups, bool with_gradient = true) {
  ValueGrad out;
  out.value = (gamma.array() * cost.array()).sum();
  if (with_gradient) {
    const ValueGrad ent = entropy(gamma);
    out.value += h.lambda * ent.value;
    out.gradient = cost + h.lambda * ent.gradient;
  } else {
    out.value += h.lambda * entropy_value(gamma);
  }
  if (h.eta > 0.0) {
    const ValueGrad om = group_sparse(gamma, groups.class_groups);
    out.value += h.eta * om.value;
    if (with_gradient) out.gradient += h.eta * om.gradient;
  }
  if (h.tau > 0.0) {
    const ValueGrad tr = temporal_reg(gamma, groups, h.order_mode);
    out.value += h.tau * tr.value;
    if (with_gradient) out.gradient += h.tau * tr.gradient;
  }
  return out;
}

struct GcgResult {
  Coupling coupling;
  std::vector<double> objective_trace;  ///< objective of every accepted iterate, starting point first
  std::vector<double> violation_trace;  ///< marginal violation of every accepted iterate
  int iterations = 0;
  bool converged = false;
};

/// Generalized conditional gradient on the composite objective.
///
/// The entropic part f = <gamma, C> + lambda H is kept exact while the group
/// terms g = eta Omega + tau T are linearized at the current iterate, so each
/// direction is an entropic OT problem with cost C + grad g. A backtracking
/// Armijo search along the segment to that direction keeps the iterate
/// feasible. The starting point is the plain Sinkhorn solution on C.
inline GcgResult gcg_solve(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::MatrixXd& cost,
                           const TrotHyperparams& h, const OrderGroups& groups) {
  h.validate();
  if (h.tau > 0.0) {
    const auto& cols = h.order_mode == OrderMode::matched ? groups.matched_cols : groups.mismatched_cols;
    if (cols.size() != static_cast<std::size_t>(cost.rows()))
      throw Error("dimension mismatch", "order groups do not cover every source row");
  }
  for (const auto& rows : groups.class_groups)
    for (Index i : rows)
      if (i < 0 || i >= cost.rows()) throw Error("dimension mismatch", "class group row out of range");

  GcgResult res;
  Eigen::MatrixXd gamma = sinkhorn(a, b, cost, h.lambda, h.sinkhorn).coupling.plan;
  ValueGrad cur = trot_objective(gamma, cost, h, groups);
  res.objective_trace.push_back(cur.value);
  res.violation_trace.push_back(Coupling{gamma, a, b}.marginal_violation());

  const bool has_groups = h.eta > 0.0 || h.tau > 0.0;
  if (!has_groups) res.converged = true;
  for (int iter = 0; has_groups && iter < h.gcg_iters; ++iter) {
    // Gradient of the linearized part only: cur.gradient - C - lambda grad H.
    Eigen::MatrixXd lin = Eigen::MatrixXd::Zero(cost.rows(), cost.cols());
    if (h.eta > 0.0) lin += h.eta * group_sparse(gamma, groups.class_groups).gradient;
    if (h.tau > 0.0) lin += h.tau * temporal_reg(gamma, groups, h.order_mode).gradient;
    const Eigen::MatrixXd target = sinkhorn(a, b, cost + lin, h.lambda, h.sinkhorn).coupling.plan;
    const Eigen::MatrixXd step = target - gamma;
    const double slope = (cur.gradient.array() * step.array()).sum();
    if (!(slope < 0.0)) {
      res.converged = true;
      break;
    }
    double alpha = 1.0;
    bool accepted = false;
    Eigen::MatrixXd candidate;
    double cand_value = 0.0;
    for (int bt = 0; bt <= h.armijo.max_backtracks; ++bt, alpha *= h.armijo.backtrack) {
      candidate = gamma + alpha * step;
      cand_value = trot_objective(candidate, cost, h, groups, false).value;
      if (cand_value <= cur.value + h.armijo.sufficient_decrease * alpha * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      res.converged = true;
      break;
    }
    const double rel = (cur.value - cand_value) / std::max(std::abs(cur.value), 1e-300);
    gamma = std::move(candidate);
    cur = trot_objective(gamma, cost, h, groups);
    res.objective_trace.push_back(cur.value);
    res.violation_trace.push_back(Coupling{gamma, a, b}.marginal_violation());
    res.iterations = iter + 1;
    if (rel < h.gcg_rel_tol) {
      res.converged = true;
      break;
    }
  }
  res.coupling = Coupling{gamma, a, b};
  return res;
}

/// Uniform probability vector of length n.
inline Eigen::VectorXd uniform_marginal(Index n) {
  if (n <= 0) throw Error("invalid marginal", "empty marginal");
  return Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
}

}  // namespace trot
