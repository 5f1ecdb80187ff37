#include "cli.hpp"

int main(int argc, char** argv) { return lfhn::cli::run(argc, argv); }
