#include <iostream>

#include "osteo/cli.hpp"

int main(int argc, char** argv) { return osteo::cli::run(argc, argv, std::cout, std::cerr); }
