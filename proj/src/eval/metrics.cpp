#include "mlehr/eval/metrics.hpp"

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>

#include "mlehr/error.hpp"

namespace mlehr::eval {

namespace {

void check_inputs(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) fail("ShapeMismatch", "scores and labels differ in length");
    for (int y : labels)
        if (y != 0 && y != 1) fail("InvalidLabel", "binary label " + std::to_string(y));
}

}  // namespace

std::optional<double> auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_inputs(scores, labels);
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    // Twice the number of correctly ordered pairs, so ties stay integral.
    std::uint64_t doubled = 0, negatives_below = 0, positives = 0, negatives = 0;
    for (size_t i = 0; i < order.size();) {
        size_t j = i;
        std::uint64_t pos = 0, neg = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] == 1 ? pos : neg) += 1;
            ++j;
        }
        doubled += pos * (2 * negatives_below + neg);
        negatives_below += neg;
        positives += pos;
        negatives += neg;
        i = j;
    }
    if (positives == 0 || negatives == 0) return std::nullopt;
    return static_cast<double>(doubled) / (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
}

std::optional<double> auroc_bruteforce(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_inputs(scores, labels);
    std::uint64_t doubled = 0, pairs = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) doubled += 2;
            else if (scores[i] == scores[j]) doubled += 1;
        }
    }
    if (pairs == 0) return std::nullopt;
    return static_cast<double>(doubled) / (2.0 * static_cast<double>(pairs));
}

std::optional<double> auroc_ovr(const std::vector<std::vector<double>>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) fail("ShapeMismatch", "scores and labels differ in length");
    if (scores.empty()) return std::nullopt;
    const size_t classes = scores.front().size();
    for (const auto& row : scores)
        if (row.size() != classes) fail("ShapeMismatch", "ragged class scores");
    for (int y : labels)
        if (y < 0 || static_cast<size_t>(y) >= classes) fail("InvalidLabel", "class " + std::to_string(y));
    double sum = 0.0;
    int present = 0;
    std::vector<double> s(scores.size());
    std::vector<int> l(scores.size());
    for (size_t c = 0; c < classes; ++c) {
        for (size_t i = 0; i < scores.size(); ++i) {
            s[i] = scores[i][c];
            l[i] = labels[i] == static_cast<int>(c) ? 1 : 0;
        }
        if (auto a = auroc(s, l)) {
            sum += *a;
            ++present;
        }
    }
    if (present == 0) return std::nullopt;
    return sum / present;
}

}  // namespace mlehr::eval
