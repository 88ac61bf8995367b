#include <string>
#include <vector>

#include "sgwb/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return sgwb::run_cli(args);
}
