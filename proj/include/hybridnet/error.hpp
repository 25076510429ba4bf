// SPDX-License-Identifier: Apache-2.0

#ifndef HYBRIDNET_ERROR_HPP
#define HYBRIDNET_ERROR_HPP

#include <stdexcept>
#include <string>

namespace hybridnet {

/// Malformed or unsupported architecture/transform configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller broke a documented precondition (shape mismatch, non-finite input, ...).
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Training diverged or produced non-finite values.
class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
    if (!ok) throw ContractError(what);
}

} // namespace detail
} // namespace hybridnet

#endif
