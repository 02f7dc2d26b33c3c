#include <iostream>

#include "falcon/cli.h"

int main(int argc, char** argv) {
  return falcon::run_cli(argc, argv, std::cout, std::cerr);
}
