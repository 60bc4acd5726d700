#include <string>
#include <vector>

#include "mrtts/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return mrtts::cli::run(args);
}
