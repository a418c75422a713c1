#include "drike/cli.hpp"

int main(int argc, char** argv) { return drike::run_cli(argc, argv); }
