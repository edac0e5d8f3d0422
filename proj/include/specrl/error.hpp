#pragma once

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The specrl-lab Authors

#include <cstddef>
#include <stdexcept>
#include <string>

namespace specrl {

/// Input violates a documented precondition (bad token id, length mismatch, ...).
class MalformedInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A combination of settings that cannot be honored, e.g. residual resume with lenience != 1.
class InvalidConfig : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite gradient or parameter produced by an update step.
class Divergence : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A state the algorithm guarantees cannot occur was reached anyway.
class InternalInvariant : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Brute-force enumeration refused because the instance is too large.
class EnumerationTooLarge : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure while reading a file; carries the 1-based line number (0 when not line-specific).
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace specrl
