#pragma once

#include <stdexcept>
#include <string>

namespace bf {

/// Invalid argument or violated precondition of an operation.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed or unreadable file.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace bf
