#include <iostream>
#include <string>
#include <vector>

#include "layerslim/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return layerslim::run_cli(args, std::cout, std::cerr);
}
