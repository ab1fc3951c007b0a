#include "fluxattn/cli.hpp"

int main(int argc, char** argv) { return fluxattn::cli::run(argc, argv); }
