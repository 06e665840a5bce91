#include "xcnn/cli.hpp"

int main(int argc, char** argv) { return xcnn::cli::run(argc, argv); }
