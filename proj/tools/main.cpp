#include "trikit/cli.hpp"

int main(int argc, char** argv) { return trikit::run_command(argc, argv); }
