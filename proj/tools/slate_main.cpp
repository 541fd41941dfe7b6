#include <iostream>
#include <string>
#include <vector>

#include "slate/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return slate::cli::dispatch(args, std::cout, std::cerr);
}
