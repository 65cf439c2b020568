#include "terraseg/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace terraseg {

double oracle_emd(const std::vector<double>& u, const std::vector<double>& v) {
    if (u.size() != v.size()) throw validation_error("oracle_emd: unequal sample sizes");
    if (u.empty()) throw validation_error("oracle_emd: empty samples");
    if (u.size() > 6) throw validation_error("oracle_emd: size cap (6) exceeded");
    std::vector<size_t> perm(u.size());
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double cost = 0.0;
        for (size_t i = 0; i < u.size(); ++i) cost += std::abs(u[i] - v[perm[i]]);
        best = std::min(best, cost);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best / static_cast<double>(u.size());
}

double oracle_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw validation_error("oracle_auc: size mismatch");
    size_t pos = 0, neg = 0;
    for (int l : labels) (l != 0 ? pos : neg)++;
    if (pos == 0 || neg == 0) throw validation_error("oracle_auc: single-class labels");
    double acc = 0.0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] == 0) continue;
        for (size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            if (scores[i] > scores[j])
                acc += 1.0;
            else if (scores[i] == scores[j])
                acc += 0.5;
        }
    }
    return acc / (static_cast<double>(pos) * static_cast<double>(neg));
}

std::array<double, 3> oracle_eigen(const std::array<std::array<double, 3>, 3>& m) {
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j)
            if (std::abs(m[i][j] - m[j][i]) > 1e-9 * std::max(1.0, std::abs(m[i][j])))
                throw validation_error("oracle_eigen: matrix not symmetric");

    // det(m - t I) = -t^3 + c2 t^2 + c1 t + c0
    double a = m[0][0], b = m[1][1], c = m[2][2];
    double d = m[0][1], e = m[0][2], f = m[1][2];
    double p1 = d * d + e * e + f * f;
    if (p1 == 0.0) {
        std::array<double, 3> ev = {a, b, c};
        std::sort(ev.begin(), ev.end());
        return ev;
    }
    double q = (a + b + c) / 3.0;
    double p2 = (a - q) * (a - q) + (b - q) * (b - q) + (c - q) * (c - q) + 2.0 * p1;
    double p = std::sqrt(p2 / 6.0);
    // B = (m - q I) / p; r = det(B) / 2 lies in [-1, 1] for symmetric input.
    double b00 = (a - q) / p, b11 = (b - q) / p, b22 = (c - q) / p;
    double b01 = d / p, b02 = e / p, b12 = f / p;
    double r = (b00 * (b11 * b22 - b12 * b12) - b01 * (b01 * b22 - b12 * b02) +
                b02 * (b01 * b12 - b11 * b02)) /
               2.0;
    r = std::clamp(r, -1.0, 1.0);
    double phi = std::acos(r) / 3.0;
    double e1 = q + 2.0 * p * std::cos(phi);
    double e3 = q + 2.0 * p * std::cos(phi + 2.0 * M_PI / 3.0);
    double e2 = 3.0 * q - e1 - e3;
    std::array<double, 3> ev = {e3, e2, e1};
    std::sort(ev.begin(), ev.end());
    return ev;
}

} // namespace terraseg
