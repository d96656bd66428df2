#include <iostream>

#include "phasedeploy/cli.hpp"

int main(int argc, char** argv) { return phasedeploy::cli::run_cli(argc, argv, std::cout, std::cerr); }
