#include <string>
#include <vector>

#include "uqd/cli.hpp"

int main(int argc, char** argv) {
    return uqd::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
