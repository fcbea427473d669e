#pragma once

// Brute-force metric oracles: O(n^2) pair counting for AUROC and per-positive
// precision for average precision. They share no code with ugrn::eval.

#include <algorithm>
#include <utility>
#include <vector>

namespace ugrn::testing {

// Exhaustive pairwise comparison.
inline double brute_auroc(const std::vector<double>& s, const std::vector<int>& y) {
    double units = 0;
    double P = 0, N = 0;
    for (int v : y) (v ? P : N) += 1;
    for (std::size_t a = 0; a < s.size(); ++a)
        for (std::size_t b = 0; b < s.size(); ++b)
            if (y[a] == 1 && y[b] == 0) units += s[a] > s[b] ? 1.0 : (s[a] == s[b] ? 0.5 : 0.0);
    return units / (P * N);
}

// For each positive: precision among all items scoring >= it; summed in
// descending score order.
inline double brute_ap(const std::vector<double>& s, const std::vector<int>& y) {
    std::vector<std::pair<double, double>> per_pos;
    for (std::size_t a = 0; a < s.size(); ++a) {
        if (!y[a]) continue;
        double hits = 0, total = 0;
        for (std::size_t b = 0; b < s.size(); ++b)
            if (s[b] >= s[a]) {
                total += 1;
                hits += y[b];
            }
        per_pos.push_back({s[a], hits / total});
    }
    std::stable_sort(per_pos.begin(), per_pos.end(), [](auto& p, auto& q) { return p.first > q.first; });
    double sum = 0;
    for (auto& [score, prec] : per_pos) sum += prec;
    return sum / static_cast<double>(per_pos.size());
}

}  // namespace ugrn::testing
