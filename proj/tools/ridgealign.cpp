#include "ridgealign/cli.hpp"

int main(int argc, char** argv) { return ridgealign::run_cli(argc, argv); }
