#include "coda/cli.hpp"

int main(int argc, char** argv) { return coda::cli::run(argc, argv); }
