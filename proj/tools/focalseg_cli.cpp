#include "focalseg/cli.hpp"

int main(int argc, char** argv) { return focalseg::run_cli(argc, argv); }
