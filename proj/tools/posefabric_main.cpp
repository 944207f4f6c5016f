#include <iostream>

#include "posefabric/harness/cli.hpp"

int main(int argc, char** argv) { return posefabric::harness::run_cli(argc, argv, std::cout, std::cerr); }
