#include "ctxrnn/cli.hpp"

int main(int argc, char** argv) { return ctxrnn::run_cli(argc, argv); }
