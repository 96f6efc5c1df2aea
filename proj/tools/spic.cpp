#include "spi/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return spi::cli::run(args, std::cout, std::cerr);
}
