#include <iostream>

#include "cli.hpp"
#include "redge/runtime.hpp"

int main(int argc, char** argv) {
  redge::tune_allocator();
  return redge::cli::run(argc, argv, std::cout, std::cerr);
}
