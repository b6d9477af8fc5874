#include "maxcombo/cli.hpp"

int main(int argc, char** argv) { return maxcombo::cli::run(argc, argv); }
