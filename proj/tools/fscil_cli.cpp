#include "fscil/cli.hpp"

int main(int argc, char** argv) { return fscil::cli_main(argc, argv); }
