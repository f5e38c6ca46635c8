#include <iostream>

#include "binsplat/cli.hpp"

int main(int argc, char** argv) { return binsplat::run_cli(argc, argv, std::cout, std::cerr); }
