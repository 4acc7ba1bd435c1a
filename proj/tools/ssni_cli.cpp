#include "ssni/harness/cli.hpp"

int main(int argc, char** argv) { return ssni::run_cli(argc, argv); }
