#include <iostream>

#include "geoadapt/cli.hpp"

int main(int argc, char** argv) { return geoadapt::cli::run(argc, argv, std::cout, std::cerr); }
