#pragma once

#include <stdexcept>
#include <string>

namespace smmix {

// Shape or dimension disagreement between operands.
struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Input violates an operation precondition (e.g. a label row that is not a
// probability distribution).
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite value surfaced during forward or backward.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// File-format problems get distinct kinds so callers (and tests) can tell
// them apart.
enum class FormatFault { BadMagic, BadVersion, Truncated, LabelOutOfRange, ShapeMismatch };

struct FormatError : std::runtime_error {
  FormatFault fault;
  FormatError(FormatFault f, const std::string& msg) : std::runtime_error(msg), fault(f) {}
};

}  // namespace smmix
