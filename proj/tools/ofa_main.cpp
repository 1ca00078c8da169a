// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

int main(int argc, char** argv) { return ofa::cli::run(argc, argv); }
