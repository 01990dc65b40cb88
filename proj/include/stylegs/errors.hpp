#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace stylegs {

/// Raised when an operation receives tensors whose extents do not fit together.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(std::string op, const std::string& detail)
      : std::invalid_argument(op + ": " + detail), op_(std::move(op)) {}
  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

/// Malformed input file. Carries the offending field name and the byte offset
/// at which parsing stopped.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::string field, std::uint64_t offset, const std::string& detail)
      : std::runtime_error(detail + " (field '" + field + "', byte offset " +
                           std::to_string(offset) + ")"),
        field_(std::move(field)),
        offset_(offset) {}
  const std::string& field() const noexcept { return field_; }
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::string field_;
  std::uint64_t offset_;
};

/// Invalid user configuration (bad flag, missing file, out-of-range value).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values, singular systems, and other numeric failures.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mask tracking could not find an acceptable mask in some view.
class TrackingError : public std::runtime_error {
 public:
  TrackingError(int view, const std::string& detail)
      : std::runtime_error("mask tracking failed at view " + std::to_string(view) + ": " + detail), view_(view) {}
  int view() const noexcept { return view_; }

 private:
  int view_;
};

}  // namespace stylegs
