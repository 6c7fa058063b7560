#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rbm {

/// Shape mismatch or out-of-range index.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Violated precondition (asymmetric input, too few samples, q out of range, ...).
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A pivot fell below the absolute floor. `block_index` is set by block solvers
/// (0-based), and is npos for dense solves.
class SingularError : public std::runtime_error {
public:
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    explicit SingularError(const std::string& what, std::size_t block = npos)
        : std::runtime_error(what), block_index(block) {}

    std::size_t block_index;
};

/// Regression had too few usable points or a degenerate design.
class FitError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace rbm
