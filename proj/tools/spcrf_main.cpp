#include "spcrf/cli.hpp"

int main(int argc, char** argv) { return spcrf::cli::run(argc, argv); }
