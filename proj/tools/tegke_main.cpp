#include "tegke/cli.hpp"

int main(int argc, char** argv) { return tegke::cli::run(argc, argv); }
