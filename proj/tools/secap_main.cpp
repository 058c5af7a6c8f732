#include "secap/cli.hpp"

int main(int argc, char** argv) { return secap::cli::dispatch(argc, argv); }
