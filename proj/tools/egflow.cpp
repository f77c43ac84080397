#include <iostream>

#include "egflow/cli.hpp"

int main(int argc, char** argv) { return egflow::run_cli(argc, argv, std::cout, std::cerr); }
