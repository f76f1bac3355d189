#include <iostream>

#include "pulse_csc/cli.hpp"

int main(int argc, char** argv) { return pulse_csc::cli::run_cli(argc, argv, std::cout, std::cerr); }
