#include "hmnet/cli.hpp"

int main(int argc, char** argv) { return hmnet::cli::run(argc, argv); }
