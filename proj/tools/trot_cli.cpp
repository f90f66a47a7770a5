// trot: command-line front end.
//
//   trot preprocess --input DIR --rate HZ [--window-sec 3] [--overlap 0.5] --out DIR
//   trot adapt --source CSV --target CSV [--method trot] [--states N] [--lambda L]
//              [--eta E] [--tau T] [--order-mode mismatched] [--seed S] --report JSON
//   trot matrix --data DIR [--methods na,td,ot,otda,coral,trot] --out JSON
//   trot synth [--classes 4] [--states 4] [--windows 200] [--dim 8] [--shift-scale 5]
//              [--seed 7] --out DIR
//
// Errors are reported on stderr as {"error": {"code": ..., "message": ...}}
// with exit status 1. TROT_LOG_LEVEL (error|warn|info|debug) sets verbosity.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "trot/trot.hpp"

namespace fs = std::filesystem;

namespace {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

Level log_level() {
  const char* env = std::getenv("TROT_LOG_LEVEL");
  if (!env) return Level::warn;
  const std::string v = env;
  if (v == "error") return Level::error;
  if (v == "info") return Level::info;
  if (v == "debug") return Level::debug;
  return Level::warn;
}

void log(Level level, const std::string& msg) {
  static const Level threshold = log_level();
  static const char* names[] = {"error", "warn", "info", "debug"};
  if (level <= threshold) std::cerr << "[" << names[static_cast<int>(level)] << "] " << msg << '\n';
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw trot::Error("io error", "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

// Recordings are `<user>.csv` or `<user>__<anything>.csv`.
std::string user_of(const fs::path& p) {
  const std::string stem = p.stem().string();
  const auto pos = stem.find("__");
  return pos == std::string::npos ? stem : stem.substr(0, pos);
}

struct PreprocessArgs {
  std::string input, out;
  double rate = 0.0, window_sec = 3.0, overlap = 0.5;
};

int run_preprocess(const PreprocessArgs& a) {
  if (!fs::is_directory(a.input)) throw trot::Error("io error", a.input + " is not a directory");
  std::map<std::string, std::vector<fs::path>> by_user;
  for (const auto& e : fs::directory_iterator(a.input))
    if (e.is_regular_file() && e.path().extension() == ".csv") by_user[user_of(e.path())].push_back(e.path());
  if (by_user.empty()) throw trot::Error("insufficient data", "no recordings in " + a.input);
  fs::create_directories(a.out);
  nlohmann::json summary = nlohmann::json::object();
  for (auto& [user, files] : by_user) {
    std::sort(files.begin(), files.end());
    trot::FeatureDataset all;
    all.user_id = user;
    std::size_t next_index = 0;
    for (const auto& f : files) {
      const auto rec = trot::csv::read_recording(f, a.rate, user);
      auto ds = trot::featurize(rec, a.window_sec, a.overlap, next_index);
      // Leave a one-index gap so recordings never form one contiguous run.
      if (!ds.empty()) next_index = ds.windows.back().window_index + 2;
      log(Level::info, f.string() + ": " + std::to_string(ds.size()) + " windows");
      for (auto& w : ds.windows) all.windows.push_back(std::move(w));
    }
    trot::csv::write_features(fs::path(a.out) / (user + ".csv"), all);
    summary[user] = all.size();
  }
  std::cout << nlohmann::json{{"users", summary}}.dump() << '\n';
  return 0;
}

struct AdaptArgs {
  std::string source, target, report, method = "trot", order_mode = "mismatched", hmm_mode = "deterministic";
  std::string dump_coupling;
  std::optional<int> states;
  std::optional<double> lambda, eta, tau;
  std::uint64_t seed = 0;
  bool timing = false;
};

int run_adapt(const AdaptArgs& a) {
  trot::TaskSpec spec;
  spec.method = trot::parse_method(a.method);
  spec.seed = a.seed;
  spec.source_user = fs::path(a.source).stem().string();
  spec.target_user = fs::path(a.target).stem().string();
  if (fs::absolute(a.source) != fs::absolute(a.target) && spec.source_user == spec.target_user)
    spec.target_user += "'";
  spec.grid.order_mode = trot::parse_order_mode(a.order_mode);
  spec.grid.hmm_mode = trot::parse_hmm_mode(a.hmm_mode);
  if (a.states) spec.grid.n_states = {*a.states};
  if (a.lambda) spec.grid.lambdas = {*a.lambda};
  if (a.eta) spec.grid.etas = {*a.eta};
  if (a.tau) spec.grid.taus = {*a.tau};

  const auto source = trot::csv::read_features(a.source, spec.source_user);
  const auto target = trot::csv::read_features(a.target, spec.target_user);
  trot::RunOptions opt;
  opt.timing = a.timing;
  const auto report = trot::run_task(spec, source, target, opt);
  write_json(a.report, trot::json::to_json(report));
  if (!a.dump_coupling.empty() && report.coupling) {
    std::ofstream out(a.dump_coupling);
    const auto& p = report.coupling->plan;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      for (Eigen::Index j = 0; j < p.cols(); ++j) out << (j ? "," : "") << trot::csv::detail::format_double(p(i, j));
      out << '\n';
    }
  }
  if (report.error) throw trot::Error(*report.error_code, *report.error);
  std::cout << nlohmann::json{{"method", a.method},
                              {"validation_accuracy", *report.validation_accuracy},
                              {"test_accuracy", *report.test_accuracy}}
                   .dump()
            << '\n';
  return 0;
}

struct MatrixArgs {
  std::string data, out, text, methods = "na,td,ot,otda,coral,trot", users;
  std::string order_mode = "mismatched", hmm_mode = "deterministic";
  std::uint64_t seed = 0;
};

int run_matrix_cmd(const MatrixArgs& a) {
  std::vector<trot::Method> methods;
  for (const auto& m : split_list(a.methods)) methods.push_back(trot::parse_method(m));
  if (methods.empty()) throw trot::Error("invalid argument", "no methods given");
  const auto users = a.users.empty() ? trot::discover_users(a.data) : split_list(a.users);
  trot::HyperGrid grid;
  grid.order_mode = trot::parse_order_mode(a.order_mode);
  grid.hmm_mode = trot::parse_hmm_mode(a.hmm_mode);
  const auto report = trot::run_matrix(a.data, users, methods, grid, a.seed);
  for (const auto& r : report.rows)
    if (r.error) log(Level::warn, trot::json::pair_name(r) + " " + trot::to_string(r.task.method) + ": " + *r.error);
  write_json(a.out, trot::json::to_json(report));
  const std::string table = trot::json::to_text(report);
  if (a.text.empty()) {
    std::cout << table;
  } else {
    std::ofstream(a.text) << table;
  }
  return 0;
}

struct SynthArgs {
  int classes = 4, states = 4, windows = 200, dim = 8, users = 2, bout = 0;
  double shift_scale = 5.0, noise = 0.1, class_sep = 2.0, state_sep = 2.0, decoy_fraction = 0.7;
  std::string shift = "random", out;
  std::uint64_t seed = 7;
};

int run_synth(const SynthArgs& a) {
  trot::SynthSpec spec;
  spec.n_classes = a.classes;
  spec.n_states = a.states;
  spec.windows_per_class = a.windows;
  spec.feature_dim = a.dim;
  spec.class_separation = a.class_sep;
  spec.state_separation = a.state_sep;
  spec.noise_std = a.noise;
  spec.seed = a.seed;
  spec.bout_length = a.bout;
  spec.validate();
  if (a.users < 1) throw trot::Error("invalid argument", "--users must be >= 1");
  if (a.shift != "random" && a.shift != "decoy" && a.shift != "none")
    throw trot::Error("invalid argument", "--shift must be random, decoy or none");
  const Eigen::MatrixXd base = trot::base_means(spec);
  fs::create_directories(a.out);
  nlohmann::json files = nlohmann::json::array();
  for (int u = 0; u < a.users; ++u) {
    Eigen::MatrixXd means = base;
    if (u > 0 && a.shift == "random") means += trot::random_shift(spec, a.shift_scale, a.seed + static_cast<std::uint64_t>(u));
    if (u > 0 && a.shift == "decoy") means += trot::decoy_shift(spec, a.decoy_fraction, u);
    const std::string id = "user" + std::to_string(u);
    const auto user = trot::generate_user(spec, means, id, static_cast<std::uint64_t>(u));
    trot::csv::write_features(fs::path(a.out) / (id + ".csv"), user.data);
    write_json(fs::path(a.out) / (id + "_atlas.json"), trot::json::to_json(user.truth));
    files.push_back(id + ".csv");
  }
  std::cout << nlohmann::json{{"files", files}}.dump() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-user adaptation of activity features by state-level optimal transport"};
  app.require_subcommand(1);

  PreprocessArgs pre;
  auto* p = app.add_subcommand("preprocess", "Segment and featurize raw recordings");
  p->add_option("--input", pre.input, "Directory of recording CSVs")->required();
  p->add_option("--rate", pre.rate, "Sample rate in Hz")->required();
  p->add_option("--window-sec", pre.window_sec, "Window length in seconds");
  p->add_option("--overlap", pre.overlap, "Window overlap fraction in [0,1)");
  p->add_option("--out", pre.out, "Output directory for feature CSVs")->required();

  AdaptArgs ad;
  auto* a = app.add_subcommand("adapt", "Run one cross-user task");
  a->add_option("--source", ad.source, "Source feature CSV")->required();
  a->add_option("--target", ad.target, "Target feature CSV")->required();
  a->add_option("--method", ad.method, "na|td|ot|otda|coral|trot");
  a->add_option("--states", ad.states, "HMM states per activity (default: grid 2,4)");
  a->add_option("--lambda", ad.lambda, "Entropy weight (default: grid)");
  a->add_option("--eta", ad.eta, "Group-sparse weight (default: grid)");
  a->add_option("--tau", ad.tau, "Temporal-order weight (default: grid)");
  a->add_option("--order-mode", ad.order_mode, "matched|mismatched");
  a->add_option("--hmm-mode", ad.hmm_mode, "deterministic|em");
  a->add_option("--seed", ad.seed, "Seed for subsampling");
  a->add_option("--report", ad.report, "Report JSON path")->required();
  a->add_option("--dump-coupling", ad.dump_coupling, "Write the chosen coupling as CSV (debug)");
  a->add_flag("--timing", ad.timing, "Record wall-clock time in the report");

  MatrixArgs mx;
  auto* m = app.add_subcommand("matrix", "Run every directed user pair for every method");
  m->add_option("--data", mx.data, "Directory of per-user feature CSVs")->required();
  m->add_option("--methods", mx.methods, "Comma-separated methods");
  m->add_option("--users", mx.users, "Comma-separated users (default: every CSV in --data)");
  m->add_option("--order-mode", mx.order_mode, "matched|mismatched");
  m->add_option("--hmm-mode", mx.hmm_mode, "deterministic|em");
  m->add_option("--seed", mx.seed, "Base seed");
  m->add_option("--out", mx.out, "Report JSON path")->required();
  m->add_option("--text", mx.text, "Write the aligned-text table here instead of stdout");

  SynthArgs sy;
  auto* s = app.add_subcommand("synth", "Generate synthetic users with known state structure");
  s->add_option("--classes", sy.classes, "Activity classes");
  s->add_option("--states", sy.states, "States per class");
  s->add_option("--windows", sy.windows, "Windows per class");
  s->add_option("--dim", sy.dim, "Feature dimension");
  s->add_option("--users", sy.users, "Number of users to emit");
  s->add_option("--shift", sy.shift, "random|decoy|none");
  s->add_option("--shift-scale", sy.shift_scale, "Norm of random per-state shifts");
  s->add_option("--decoy-fraction", sy.decoy_fraction, "Interpolation fraction towards the decoy state");
  s->add_option("--noise", sy.noise, "Per-coordinate noise std");
  s->add_option("--class-sep", sy.class_sep, "Class separation");
  s->add_option("--state-sep", sy.state_sep, "State separation");
  s->add_option("--bout", sy.bout, "Windows per activity bout (0 = 5 x states)");
  s->add_option("--seed", sy.seed, "Seed");
  s->add_option("--out", sy.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << nlohmann::json{{"error", {{"code", "usage"}, {"message", e.what()}}}}.dump() << '\n';
    return 2;
  }

  try {
    if (*p) return run_preprocess(pre);
    if (*a) return run_adapt(ad);
    if (*m) return run_matrix_cmd(mx);
    if (*s) return run_synth(sy);
  } catch (const trot::Error& e) {
    std::cerr << nlohmann::json{{"error", {{"code", e.code()}, {"message", e.what()}}}}.dump() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", {{"code", "internal"}, {"message", e.what()}}}}.dump() << '\n';
    return 1;
  }
  return 1;
}
