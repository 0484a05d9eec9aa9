// Command-line entry point. Subcommand dispatch lives in funnel/cli.hpp.
#include "funnel/cli.hpp"

int main(int argc, char** argv) { return funnel::cli::run_cli(argc, argv); }
