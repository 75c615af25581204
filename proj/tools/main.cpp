#include <iostream>

#include "dualvit/cli.hpp"

int main(int argc, char** argv) { return dualvit::run_cli(argc, argv, std::cout, std::cerr); }
