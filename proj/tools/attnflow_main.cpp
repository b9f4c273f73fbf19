#include "attnflow/cli/run.hpp"

int main(int argc, char** argv) { return attnflow::cli::main(argc, argv); }
