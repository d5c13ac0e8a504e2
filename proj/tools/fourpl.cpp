#include <fourpl/cli.hpp>

int main(int argc, char** argv) { return fourpl::run_cli(argc, argv); }
