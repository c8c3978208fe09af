#include <vector>
#include <string>

#include "taperkit/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return taperkit::run_cli(args);
}
