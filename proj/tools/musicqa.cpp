#include "musicqa/cli.hpp"

int main(int argc, char** argv) { return musicqa::run_cli(argc, argv); }
