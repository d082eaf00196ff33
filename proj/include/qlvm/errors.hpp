#pragma once

#include <stdexcept>
#include <string>

namespace qlvm {

// Raised when an optimization or evaluation produces non-finite values.
// The CLI maps this to exit code 2; config/user errors (std::invalid_argument
// and friends) map to exit code 1.
class numerical_error : public std::runtime_error {
public:
    explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace qlvm
