#include "refined/cli.hpp"

int main(int argc, char** argv) { return refined::cli::run(argc, argv); }
