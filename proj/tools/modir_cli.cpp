#include "modir/cli.hpp"

int main(int argc, char** argv) { return modir::cli::run(argc, argv); }
