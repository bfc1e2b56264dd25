#include "xclr/cli.hpp"

int main(int argc, char** argv) { return xclr::run_cli(argc, argv); }
