#include "slurej/cli.hpp"

int main(int argc, char** argv) { return slurej::cli::run(argc, argv); }
