#pragma once

#include <stdexcept>
#include <string>

namespace prodisc {

// Error taxonomy mirrors the CLI exit codes: io=1, config=2, eval=3, numeric=4.

class IoError : public std::runtime_error {
 public:
  enum class Kind {
    open_failed,
    write_failed,
    bad_magic,
    bad_version,
    truncated,
    crc_mismatch,
  };

  IoError(Kind kind, std::string message)
      : std::runtime_error(std::move(message)), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// NaN/Inf escaping an operation, or a non-finite gradient reaching the optimizer.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Single-class AUC and similar undefined-metric situations.
class EvalUndefinedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace prodisc
