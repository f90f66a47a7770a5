#pragma once

// JSON forms of atlases, couplings and reports, and the aligned-text table.

#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "trot/eval.hpp"
#include "trot/hmm.hpp"
#include "trot/ot.hpp"

namespace trot::json {

using nlohmann::json;

inline json matrix_rows(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline json vector_values(const Eigen::VectorXd& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline json to_json(const TemporalAtlas& atlas) {
  json states = json::array();
  for (const auto& s : atlas.states)
    states.push_back({{"class", s.class_id}, {"order", s.order}, {"mean", s.mean}, {"var", s.variance}});
  return {{"user_id", atlas.user_id}, {"n_states", atlas.n_states}, {"mode", to_string(atlas.mode)},
          {"states", std::move(states)}};
}

inline TemporalAtlas atlas_from_json(const json& j) {
  try {
    TemporalAtlas a;
    a.user_id = j.at("user_id").get<std::string>();
    a.n_states = j.at("n_states").get<int>();
    a.mode = parse_hmm_mode(j.at("mode").get<std::string>());
    for (const auto& s : j.at("states")) {
      GaussianState g;
      g.class_id = s.at("class").get<int>();
      g.order = s.at("order").get<int>();
      g.mean = s.at("mean").get<std::vector<double>>();
      g.variance = s.at("var").get<std::vector<double>>();
      if (g.mean.size() != g.variance.size()) throw Error("parse error", "mean/var length mismatch");
      a.states.push_back(std::move(g));
    }
    a.weights.assign(a.size(), a.size() ? 1.0 / static_cast<double>(a.size()) : 0.0);
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw Error("parse error", e.what());
  }
}

inline json to_json(const Coupling& c) {
  return {{"rows", c.plan.rows()},
          {"cols", c.plan.cols()},
          {"plan", matrix_rows(c.plan)},
          {"row_marginal", vector_values(c.row_marginal)},
          {"col_marginal", vector_values(c.col_marginal)},
          {"marginal_violation", c.marginal_violation()}};
}

inline json to_json(const HyperChoice& h) {
  json j = json::object();
  if (h.lambda) j["lambda"] = *h.lambda;
  if (h.eta) j["eta"] = *h.eta;
  if (h.tau) j["tau"] = *h.tau;
  if (h.n_states) j["n_states"] = *h.n_states;
  return j;
}

template <class T>
json optional_value(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

inline json to_json(const AdaptReport& r) {
  json j;
  j["source_user"] = r.task.source_user;
  j["target_user"] = r.task.target_user;
  j["method"] = to_string(r.task.method);
  j["seed"] = r.task.seed;
  j["status"] = r.error ? "failed" : "ok";
  if (r.error) {
    j["error"] = {{"code", *r.error_code}, {"message", *r.error}};
  }
  j["chosen_hyper"] = r.chosen ? to_json(*r.chosen) : json(nullptr);
  if (r.task.method == Method::trot) {
    j["order_mode"] = to_string(r.task.grid.order_mode);
    j["hmm_mode"] = to_string(r.task.grid.hmm_mode);
  }
  j["validation_accuracy"] = optional_value(r.validation_accuracy);
  j["test_accuracy"] = optional_value(r.test_accuracy);
  j["n_source"] = r.n_source;
  j["n_validation"] = r.n_validation;
  j["n_test"] = r.n_test;
  j["objective_trace"] = r.objective_trace;
  json grid = json::array();
  for (const auto& g : r.grid) {
    json e = {{"hyper", to_json(g.hyper)}, {"validation_accuracy", optional_value(g.validation_accuracy)}};
    if (g.error) e["error"] = *g.error;
    grid.push_back(std::move(e));
  }
  j["grid"] = std::move(grid);
  json preds = json::array();
  for (const auto& p : r.predictions) preds.push_back({p.window_index, p.label, p.predicted});
  j["predictions_columns"] = {"window_index", "label", "predicted"};
  j["predictions"] = std::move(preds);
  if (r.coupling) j["coupling"] = to_json(*r.coupling);
  if (r.seconds) j["seconds"] = *r.seconds;
  return j;
}

inline std::string pair_name(const AdaptReport& r) { return r.task.source_user + "->" + r.task.target_user; }

inline json to_json(const MatrixReport& m) {
  json j;
  j["users"] = m.users;
  std::vector<std::string> methods;
  for (Method x : m.methods) methods.push_back(to_string(x));
  j["methods"] = methods;
  j["skipped"] = m.skipped;
  std::vector<std::string> pairs;
  for (const auto& r : m.rows)
    if (r.task.method == m.methods.front()) pairs.push_back(pair_name(r));
  j["pairs"] = pairs;
  json table = json::object();
  for (const auto& r : m.rows) table[to_string(r.task.method)][pair_name(r)] = optional_value(r.test_accuracy);
  j["table"] = std::move(table);
  json rows = json::array();
  for (const auto& r : m.rows) rows.push_back(to_json(r));
  j["rows"] = std::move(rows);
  return j;
}

/// Methods x directed pairs, accuracies in percent.
inline std::string to_text(const MatrixReport& m) {
  std::vector<std::string> pairs;
  if (!m.methods.empty())
    for (const auto& r : m.rows)
      if (r.task.method == m.methods.front()) pairs.push_back(pair_name(r));
  std::map<std::pair<std::string, std::string>, std::string> cell;
  for (const auto& r : m.rows) {
    std::ostringstream v;
    if (r.test_accuracy)
      v << std::fixed << std::setprecision(2) << 100.0 * *r.test_accuracy;
    else
      v << "failed";
    cell[{to_string(r.task.method), pair_name(r)}] = v.str();
  }
  std::size_t width = 8;
  for (const auto& p : pairs) width = std::max(width, p.size() + 2);
  std::ostringstream out;
  out << std::left << std::setw(8) << "method";
  for (const auto& p : pairs) out << std::right << std::setw(static_cast<int>(width)) << p;
  out << '\n';
  for (Method x : m.methods) {
    const auto name = to_string(x);
    out << std::left << std::setw(8) << name;
    for (const auto& p : pairs) out << std::right << std::setw(static_cast<int>(width)) << cell[{name, p}];
    out << '\n';
  }
  for (const auto& s : m.skipped) out << "skipped: " << s << '\n';
  return out.str();
}

}  // namespace trot::json
