#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "hcp/alloc.hpp"

int main(int argc, char** argv) {
    hcp::tune_allocator();
    doctest::Context ctx(argc, argv);
    return ctx.run();
}
