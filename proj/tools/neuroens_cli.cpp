#include "neuroens/cli.hpp"

int main(int argc, char** argv) { return neuroens::cli_dispatch(argc, argv); }
