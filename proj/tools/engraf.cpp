#include <iostream>

#include "engraf/cli.hpp"

int main(int argc, char** argv) { return engraf::cli::run(argc, argv, std::cout, std::cerr); }
