#include "rgdepth/cli.hpp"

int main(int argc, char** argv) { return rgdepth::cli::run(argc, argv); }
