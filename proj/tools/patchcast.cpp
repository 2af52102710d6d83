#include "patchcast/experiment.hpp"

#include <iostream>

int main(int argc, char** argv) { return patchcast::run_cli(argc, argv, std::cout, std::cerr); }
