#include <iostream>
#include <string>
#include <vector>

#include "simmer/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return simmer::dispatch(args, std::cout, std::cerr);
}
