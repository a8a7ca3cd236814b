#pragma once

#include <stdexcept>
#include <string>

namespace tgnn {

/// Error with a stable machine-readable class tag next to the human message.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

}  // namespace tgnn
