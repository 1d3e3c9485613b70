#include "actfn/cli.hpp"

int main(int argc, char** argv) { return actfn::cli_main(argc, argv); }
