#include <iostream>

#include "dtmix/cli.hpp"

int main(int argc, char** argv) { return dtmix::run_cli(argc, argv, std::cerr); }
