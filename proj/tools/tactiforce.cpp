#include <iostream>

#include "tactiforce/cli.hpp"

int main(int argc, char** argv) { return tactiforce::cli::run(argc, argv, std::cout, std::cerr); }
