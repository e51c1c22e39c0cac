#include "decelgp/cli.hpp"

int main(int argc, char** argv) { return decelgp::run(argc, argv); }
