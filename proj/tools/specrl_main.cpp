// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The specrl-lab Authors

#include <iostream>

#include "specrl/app.hpp"

int main(int argc, char** argv) { return specrl::run_cli(argc, argv, std::cout, std::cerr); }
