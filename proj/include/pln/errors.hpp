#ifndef PLN_ERRORS_HPP
#define PLN_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace pln {

/// Tensor dimensions do not line up for the requested operation.
struct ShapeError : std::invalid_argument {
  explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// A run configuration is internally inconsistent or violates a stage invariant.
struct ConfigError : std::invalid_argument {
  explicit ConfigError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Caller handed in data outside the documented domain (bad token id, bad index).
struct InputError : std::invalid_argument {
  explicit InputError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// An operation was invoked in a state its contract forbids (e.g. CFM at stage 1).
struct ContractError : std::logic_error {
  explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

/// Unrecoverable numerical failure at runtime (NaN loss, unreadable file).
struct RuntimeFailure : std::runtime_error {
  explicit RuntimeFailure(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace pln

#endif  // PLN_ERRORS_HPP
