// SPDX-License-Identifier: Apache-2.0
#include "atom/cli/commands.hpp"

int main(int argc, char** argv) { return atom::cli::run_cli(argc, argv); }
