#include "cli.hpp"

int main(int argc, char** argv) { return rpinn::cli::run(argc, argv); }
