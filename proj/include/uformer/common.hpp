#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace uformer {

// Base class for everything this library throws on purpose. Catching
// uformer::Error at the CLI boundary separates our failures from genuine
// programming bugs, which surface as assertions or std exceptions.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shape disagreements: bad operand ranks, mismatched axes, invalid
// reshape targets.
struct ShapeError : Error {
  using Error::Error;
};

// Bad argument values outside the shape system: negative sizes, empty
// signals, probabilities outside [0, 1].
struct ValueError : Error {
  using Error::Error;
};

// Unparseable or inconsistent configuration input.
struct ConfigError : Error {
  using Error::Error;
};

// File format and filesystem trouble (WAV, manifests, checkpoints).
struct IoError : Error {
  using Error::Error;
};

// A computation produced NaN or infinity. The message names the op and the
// enclosing layer scope so the failure can be localised without a debugger.
struct NumericError : Error {
  using Error::Error;
};

// Overlap-add resynthesis cannot cover some interior sample with the
// configured window and hop.
struct SynthesisError : Error {
  using Error::Error;
};

using Shape = std::vector<std::int64_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

template <class E = ValueError>
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw E(msg);
}

}  // namespace uformer
