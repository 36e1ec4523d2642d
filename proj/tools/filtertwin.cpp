#include <iostream>

#include "filtertwin/cli.hpp"

int main(int argc, char** argv) { return filtertwin::run_cli(argc, argv, std::cout, std::cerr); }
