#include <string>
#include <vector>

#include "vebridge/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return vebridge::run_command(args);
}
