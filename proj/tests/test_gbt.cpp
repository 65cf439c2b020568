#include <doctest.h>

TEST_SUITE_BEGIN("gbt");
TEST_SUITE_END();
