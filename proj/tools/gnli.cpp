#include "gnli/cli.hpp"

int main(int argc, char** argv) { return gnli::cli::run(argc, argv); }
