#include <iostream>

#include "adaptok/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return adaptok::cli::dispatch(args, std::cout, std::cerr);
}
