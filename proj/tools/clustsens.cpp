#include <iostream>

#include "clustsens/cli.hpp"

int main(int argc, char** argv) { return clustsens::cli::run(argc, argv, std::cout, std::cerr); }
