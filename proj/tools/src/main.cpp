#include "micronet_cli/commands.hpp"

int main(int argc, char** argv) { return micronet::cli::run(argc, argv); }
