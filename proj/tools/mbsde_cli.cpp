#include "mbsde/cli.hpp"

int main(int argc, char** argv) { return mbsde::cli_main(argc, argv); }
