#include "dabtps/cli.hpp"

int main(int argc, char** argv) { return dabtps::cli_main(argc, argv); }
