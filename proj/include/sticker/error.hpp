#pragma once

#include <stdexcept>
#include <string>

namespace sticker {

// Caller passed something outside an operation's domain.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Operation is not legal in the object's current state (e.g. extending a vocabulary twice).
class InvalidState : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// A vector that must be L2-normalized has (numerically) zero length.
class DegenerateEmbedding : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed or inconsistent on-disk data: manifests, checkpoints, indexes, templates.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A loss or gradient became NaN/Inf.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace sticker
