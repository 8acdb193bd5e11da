#include "contractify/cli.hpp"

int main(int argc, char** argv) { return contractify::run_cli(argc, argv); }
