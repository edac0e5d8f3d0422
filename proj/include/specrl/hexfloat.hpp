#pragma once

// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The specrl-lab Authors

#include <optional>
#include <string>
#include <string_view>

namespace specrl {

/// Lossless text form of a double ("%a"); parse_hexfloat(format_hexfloat(x)) == x bit for bit.
std::string format_hexfloat(double value);

/// Parses any strtod-accepted spelling (hex or decimal). Empty optional on trailing junk.
std::optional<double> parse_hexfloat(std::string_view text);

}  // namespace specrl
