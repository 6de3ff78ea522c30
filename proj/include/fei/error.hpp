#pragma once

#include <stdexcept>
#include <string>

namespace fei {

/// Library-wide exception carrying a short machine-readable code
/// ("bad-magic", "shape-mismatch", ...) next to the human message.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

}  // namespace fei
