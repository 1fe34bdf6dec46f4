#include <iostream>

#include "straightflow/cli/commands.hpp"

int main(int argc, char** argv) { return straightflow::cli::run(argc, argv, std::cout, std::cerr); }
