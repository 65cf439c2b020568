#include <doctest.h>

TEST_SUITE_BEGIN("kernels");
TEST_SUITE_END();
