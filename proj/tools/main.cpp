#include "i2p/cli.hpp"

int main(int argc, char** argv) {
    return i2p::dispatch(argc, argv);
}
