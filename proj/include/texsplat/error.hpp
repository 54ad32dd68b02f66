#pragma once

#include <stdexcept>
#include <string>

namespace texsplat {

enum class ErrorKind {
    invalid_dimension,
    coordinate,
    capacity,
    invalid_config,
    degenerate_fit,
    schedule,
    layout,
    layout_invariant,
    input,
    key_overflow,
    invalid_key,
    corrupt_index,
    internal_consistency,
    schema,
    io,
    precondition,
};

/// Error thrown by all texsplat modules. Carries a kind so callers and
/// tests can match on the failure class instead of the message text.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

} // namespace texsplat
