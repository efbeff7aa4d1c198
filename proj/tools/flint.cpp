#include "flint/cli.hpp"

int main(int argc, char** argv) { return flint::run_cli(argc, argv); }
