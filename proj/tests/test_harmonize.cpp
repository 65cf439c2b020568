#include <doctest.h>

TEST_SUITE_BEGIN("harmonize");
TEST_SUITE_END();
