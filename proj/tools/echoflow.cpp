#include "echoflow/cli.hpp"

int main(int argc, char** argv) { return echoflow::cli::parse_and_dispatch(argc, argv); }
