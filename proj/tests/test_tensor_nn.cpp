#include <doctest.h>

TEST_SUITE_BEGIN("tensor-nn");
TEST_SUITE_END();
