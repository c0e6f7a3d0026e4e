#include "mtdnet/cli.hpp"

int main(int argc, char** argv) { return mtdnet::cli_main(argc, argv); }
