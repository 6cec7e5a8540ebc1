#include "cli.hpp"

int main(int argc, char** argv) { return fabmix::cli::cli_main(argc, argv); }
