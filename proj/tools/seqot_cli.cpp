#include "seqot/cli.hpp"

int main(int argc, char** argv) { return seqot::cli::run_cli(argc, argv); }
