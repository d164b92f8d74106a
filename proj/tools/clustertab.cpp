#include "clustertab/cli.hpp"

int main(int argc, char** argv) { return clustertab::run_cli(argc, argv); }
