#include "vqqat/cli.hpp"

int main(int argc, char** argv) {
    return vqqat::cli::run(argc, argv);
}
