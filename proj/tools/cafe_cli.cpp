#include <iostream>

#include "cafe/cli.hpp"

int main(int argc, char** argv) { return cafe::run_cli(argc, argv, std::cout, std::cerr); }
