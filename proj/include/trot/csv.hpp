#pragma once

// CSV readers and writers for raw recordings and feature datasets.
//
//   recording: timestamp,acc_x,acc_y,acc_z,gyro_x,gyro_y,gyro_z,label
//   features:  window_index,label,f0,...,f{d-1}   (empty label = unknown)

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "trot/dataset.hpp"
#include "trot/error.hpp"
#include "trot/preprocess.hpp"

namespace trot::csv {

namespace detail {

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline double to_double(std::string_view s, const std::string& where) {
  s = trim(s);
  // std::from_chars for double is available in libstdc++ 11.
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw Error("parse error", where + ": '" + std::string(s) + "' is not a number");
  return v;
}

inline long long to_int(std::string_view s, const std::string& where) {
  s = trim(s);
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw Error("parse error", where + ": '" + std::string(s) + "' is not an integer");
  return v;
}

inline std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("io error", "cannot open " + path.string());
  return in;
}

}  // namespace detail

inline constexpr std::string_view kRecordingHeader =
    "timestamp,acc_x,acc_y,acc_z,gyro_x,gyro_y,gyro_z,label";

inline Recording read_recording(std::istream& in, double sample_rate, std::string user_id,
                                const std::string& source_name = "recording") {
  Recording rec;
  rec.user_id = std::move(user_id);
  rec.sample_rate = sample_rate;
  std::string line;
  if (!std::getline(in, line) || detail::trim(line) != kRecordingHeader)
    throw Error("parse error", source_name + ": expected header '" + std::string(kRecordingHeader) + "'");
  double last_ts = -INFINITY;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split(line);
    const std::string where = source_name + ":" + std::to_string(row);
    if (cells.size() != 8) throw Error("parse error", where + ": expected 8 columns");
    const double ts = detail::to_double(cells[0], where);
    if (ts < last_ts) throw Error("invalid recording", where + ": timestamps must be non-decreasing");
    last_ts = ts;
    rec.acc_x.push_back(detail::to_double(cells[1], where));
    rec.acc_y.push_back(detail::to_double(cells[2], where));
    rec.acc_z.push_back(detail::to_double(cells[3], where));
    rec.gyro_x.push_back(detail::to_double(cells[4], where));
    rec.gyro_y.push_back(detail::to_double(cells[5], where));
    rec.gyro_z.push_back(detail::to_double(cells[6], where));
    rec.labels.push_back(static_cast<int>(detail::to_int(cells[7], where)));
  }
  rec.validate();
  return rec;
}

inline Recording read_recording(const std::filesystem::path& path, double sample_rate, std::string user_id) {
  auto in = detail::open_in(path);
  return read_recording(in, sample_rate, std::move(user_id), path.string());
}

inline void write_features(std::ostream& out, const FeatureDataset& ds) {
  out << "window_index,label";
  for (std::size_t j = 0; j < ds.dim(); ++j) out << ",f" << j;
  out << '\n';
  for (const auto& w : ds.windows) {
    out << w.window_index << ',';
    if (w.label) out << *w.label;
    for (double v : w.features) out << ',' << detail::format_double(v);
    out << '\n';
  }
}

inline void write_features(const std::filesystem::path& path, const FeatureDataset& ds) {
  std::ofstream out(path);
  if (!out) throw Error("io error", "cannot write " + path.string());
  write_features(out, ds);
}

inline FeatureDataset read_features(std::istream& in, std::string user_id,
                                    const std::string& source_name = "features") {
  FeatureDataset ds;
  ds.user_id = std::move(user_id);
  std::string line;
  if (!std::getline(in, line)) throw Error("parse error", source_name + ": missing header");
  const auto header = detail::split(line);
  if (header.size() < 2 || detail::trim(header[0]) != "window_index" || detail::trim(header[1]) != "label")
    throw Error("parse error", source_name + ": expected header 'window_index,label,f0,...'");
  for (std::size_t j = 2; j < header.size(); ++j)
    if (detail::trim(header[j]) != "f" + std::to_string(j - 2))
      throw Error("parse error", source_name + ": feature columns must be f0..f{d-1}");
  const std::size_t dim = header.size() - 2;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split(line);
    const std::string where = source_name + ":" + std::to_string(row);
    if (cells.size() != dim + 2) throw Error("parse error", where + ": wrong column count");
    FeatureWindow w;
    const long long idx = detail::to_int(cells[0], where);
    if (idx < 0) throw Error("parse error", where + ": negative window_index");
    w.window_index = static_cast<std::size_t>(idx);
    if (!detail::trim(cells[1]).empty()) w.label = static_cast<int>(detail::to_int(cells[1], where));
    w.features.reserve(dim);
    for (std::size_t j = 0; j < dim; ++j) w.features.push_back(detail::to_double(cells[j + 2], where));
    ds.windows.push_back(std::move(w));
  }
  validate(ds);
  return ds;
}

inline FeatureDataset read_features(const std::filesystem::path& path, std::string user_id) {
  auto in = detail::open_in(path);
  return read_features(in, std::move(user_id), path.string());
}

}  // namespace trot::csv
