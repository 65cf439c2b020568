#pragma once

#include <array>
#include <vector>

#include "terraseg/common.hpp"

namespace terraseg {

// Independent reference computations used by the test and acceptance suites.
// These deliberately avoid the algorithms used on the production paths.

// Exact min-cost perfect matching under |.| cost via exhaustive permutations.
// Sizes are capped at 6 (720 permutations).
double oracle_emd(const std::vector<double>& u, const std::vector<double>& v);

// O(n^2) pairwise AUC with ties credited 0.5.
double oracle_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Eigenvalues of a symmetric 3x3 matrix (ascending) via the characteristic
// polynomial (Cardano on the depressed cubic).
std::array<double, 3> oracle_eigen(const std::array<std::array<double, 3>, 3>& m);

} // namespace terraseg
