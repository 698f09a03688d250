#include <iostream>

#include "rwd/cli/app.hpp"

int main(int argc, char** argv) {
  return rwd::cli::run({argv + 1, argv + argc}, std::cout, std::cerr);
}
