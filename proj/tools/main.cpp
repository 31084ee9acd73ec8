#include <iostream>

#include "gcomm/cli.hpp"

int main(int argc, char** argv) {
  return gcomm::cli::run(argc, argv, std::cout, std::cerr);
}
