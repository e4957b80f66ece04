#include "commands.hpp"

int main(int argc, char** argv) { return ps2::cli::run(argc, argv); }
