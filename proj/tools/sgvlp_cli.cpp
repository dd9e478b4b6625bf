#include "sgvlp/cli.hpp"

int main(int argc, char** argv) { return sgvlp::cli_dispatch(argc, argv); }
