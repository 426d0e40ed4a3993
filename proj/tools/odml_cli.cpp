#include <iostream>

#include "odml/cli.hpp"

int main(int argc, char** argv) {
  return odml::cli::run(argc, argv, std::cout, std::cerr);
}
