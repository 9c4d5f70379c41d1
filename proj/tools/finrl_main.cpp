#include <iostream>

#include "finrl/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return finrl::run_cli(args, std::cout, std::cerr);
}
