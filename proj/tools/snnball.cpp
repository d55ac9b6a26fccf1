#include <iostream>

#include "snnball/cli.hpp"

int main(int argc, char** argv) { return snnball::run_cli(argc, argv, std::cout, std::cerr); }
