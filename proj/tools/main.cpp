#include "pcrec/cli.hpp"

int main(int argc, char** argv) { return pcrec::run_cli(argc, argv); }
