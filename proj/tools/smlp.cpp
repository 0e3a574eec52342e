#include <iostream>

#include "smlp/commands.hpp"

int main(int argc, char** argv) { return smlp::run_cli(argc, argv, std::cout, std::cerr); }
