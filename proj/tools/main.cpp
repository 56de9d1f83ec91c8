#include "hfusion/cli.h"

int main(int argc, char** argv) { return hfusion::run_cli(argc, argv); }
