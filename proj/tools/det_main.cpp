#include <iostream>
#include <string>
#include <vector>

#include <det/cli.hpp>

int main(int argc, char** argv)
{
  std::vector<std::string> args(argv + 1, argv + argc);
  return det::cli::run(args, std::cout, std::cerr);
}
