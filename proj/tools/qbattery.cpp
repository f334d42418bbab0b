#include "qbat/cli.hpp"

int main(int argc, char** argv)
{
    return qbat::run_cli(argc, argv);
}
