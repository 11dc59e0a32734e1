#include "gzeb/cli.hpp"

int main(int argc, char** argv) { return gzeb::cli_main(argc, argv); }
