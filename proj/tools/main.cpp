#include "distcal/cli.hpp"

int main(int argc, char** argv) { return distcal::run_cli(argc, argv); }
