#pragma once

#include <stdexcept>
#include <string>

namespace msgcn {

// Base for all library errors. The CLI maps these to exit code 2.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File format / serialization problems (bad magic, truncation, checksum).
struct IoError : Error {
  using Error::Error;
};

// Semantic problems in input data (duplicate tiles, level gaps, bad labels).
struct DataError : Error {
  using Error::Error;
};

// Tensor shape mismatches and other programming-contract violations.
struct ShapeError : Error {
  using Error::Error;
};

}  // namespace msgcn
