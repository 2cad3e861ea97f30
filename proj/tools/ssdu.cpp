#include "ssdu/cli.hpp"

int main(int argc, char** argv) { return ssdu::run_cli(argc, argv); }
