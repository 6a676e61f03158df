// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "dynsplit/cli.hpp"

int main(int argc, char** argv) {
    return dynsplit::cli_main(argc, argv, std::cout, std::cerr);
}
