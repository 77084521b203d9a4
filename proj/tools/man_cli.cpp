#include <iostream>

#include "man/cli.hpp"

int main(int argc, char** argv) { return man::cli::run(argc, argv, std::cout, std::cerr); }
