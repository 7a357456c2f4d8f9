#include "deepsketch/cli/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return deepsketch::cli::run(std::move(args));
}
