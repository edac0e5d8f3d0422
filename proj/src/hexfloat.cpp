// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The specrl-lab Authors

#include "specrl/hexfloat.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>

namespace specrl {

std::string format_hexfloat(double value) {
  char buf[64];
  const int n = std::snprintf(buf, sizeof(buf), "%a", value);
  return std::string(buf, static_cast<std::size_t>(n));
}

std::optional<double> parse_hexfloat(std::string_view text) {
  if (text.empty()) return std::nullopt;
  const std::string owned(text);
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(owned.c_str(), &end);
  if (end != owned.c_str() + owned.size()) return std::nullopt;
  // Subnormals set ERANGE but still round-trip; only overflow is a failure.
  if (errno == ERANGE && std::isinf(v)) return std::nullopt;
  return v;
}

}  // namespace specrl
