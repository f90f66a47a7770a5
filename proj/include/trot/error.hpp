#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace trot {

/// Exception thrown by every stage of the pipeline.
///
/// `code()` is a short, stable tag such as "insufficient data" or
/// "scaler mismatch"; the CLI echoes it in its error JSON.
class Error : public std::runtime_error {
 public:
  explicit Error(std::string code, const std::string& detail = {})
      : std::runtime_error(detail.empty() ? code : code + ": " + detail),
        code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

}  // namespace trot
