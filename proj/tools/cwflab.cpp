#include "cwf/cli.hpp"

int main(int argc, char** argv) { return cwf::run_cli(argc, argv); }
