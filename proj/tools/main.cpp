#include "cli.hpp"

#include <iostream>

int
main(int argc, char** argv)
{
  std::ios::sync_with_stdio(false);
  const int code = kmerflow::cli::run(argc, argv, std::cout, std::cerr);
  std::cout.flush();
  return code;
}
