#include <iostream>
#include <string>
#include <vector>

#include "prowave/app/commands.hpp"

int main(int argc, char** argv) {
  std::ios::sync_with_stdio(false);
  return prowave::app::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
