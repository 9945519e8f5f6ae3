#include "cli/commands.hpp"

int main(int argc, char** argv) { return pafm::cli::run(argc, argv); }
