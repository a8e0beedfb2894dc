// SPDX-License-Identifier: Apache-2.0
#include "steerlab/cli.hpp"

int main(int argc, char** argv) { return steerlab::cli::run(argc, argv); }
