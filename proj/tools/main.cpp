#include <string>
#include <vector>

#include "filterlab/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return filterlab::dispatch(args);
}
