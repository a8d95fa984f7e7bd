#include "alprio/cli.hpp"

int main(int argc, char** argv) { return alprio::run_cli(argc, argv); }
