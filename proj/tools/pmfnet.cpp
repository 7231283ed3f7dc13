#include <string>
#include <vector>

#include "pmf/cli.hpp"

int main(int argc, char** argv)
{
    std::vector<std::string> args(argv + 1, argv + argc);
    return pmf::run_cli(args);
}
