#include "bcaps/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
    return bcaps::cli::run(argc, argv, std::cout, std::cerr);
}
