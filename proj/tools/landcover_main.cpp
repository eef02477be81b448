#include <iostream>

#include "landcover/cli.hpp"

int main(int argc, char** argv) {
  return landcover::run_cli(argc, argv, std::cout, std::cerr);
}
