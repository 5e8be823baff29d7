#include <iostream>

#include "nadex/cli.hpp"

int main(int argc, char** argv) {
  return nadex::cli::run(argc, argv, std::cout, std::cerr);
}
