#include <string>
#include <vector>

#include "kst/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return kst::run_cli(args);
}
