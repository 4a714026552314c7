#include "scicot/cli.hpp"

int main(int argc, char** argv) { return scicot::cli_main(argc, argv); }
