#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace cssgr {

// Library-wide exception. `kind` is a short machine-readable tag that the
// CLI maps into its stderr error object ("shape", "contract", "config",
// "io", "numeric", "autodiff").
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

[[noreturn]] inline void fail(std::string kind, const std::string& message) {
  throw Error(std::move(kind), message);
}

}  // namespace cssgr
