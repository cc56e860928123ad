#include <iostream>

#include "shadowlift/cli.hpp"

int main(int argc, char** argv) {
    return shadowlift::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
