#include "duq/cli.hpp"

int main(int argc, char** argv) { return duq::cli::run_main(argc, argv); }
