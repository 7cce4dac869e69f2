#include "ugttt/cli.hpp"

int main(int argc, char** argv) { return ugttt::cli::run(argc, argv); }
