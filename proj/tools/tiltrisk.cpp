#include <iostream>
#include <string>
#include <vector>

#include "tiltrisk/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return tiltrisk::cli::run(std::move(args), std::cout, std::cerr);
}
