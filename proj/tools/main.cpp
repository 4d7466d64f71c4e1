#include "tonguesync/cli.hpp"

int main(int argc, char** argv) { return tonguesync::cli::dispatch(argc, argv); }
