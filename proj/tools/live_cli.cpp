#include <iostream>

#include "live/commands.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return live::run_cli(args, std::cout, std::cerr);
}
