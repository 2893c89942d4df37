#include "werm/cli.hpp"

int main(int argc, char** argv) { return werm::cli::run(argc, argv); }
