#include "ufnet/experiment.hpp"

int main(int argc, char** argv) { return ufnet::cli_main(argc, argv); }
