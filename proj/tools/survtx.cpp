#include <iostream>
#include <string>
#include <vector>

#include "survtx/cli.hpp"

int main(int argc, char** argv) {
  return survtx::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
