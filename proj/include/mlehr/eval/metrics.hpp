#pragma once

#include <optional>
#include <vector>

namespace mlehr::eval {

// Mann-Whitney AUROC with ties counted as half. Absent when either class is
// empty. Throws InvalidLabel for labels outside {0, 1}.
std::optional<double> auroc(const std::vector<double>& scores, const std::vector<int>& labels);

// O(n^2) pair counting; the reference for auroc().
std::optional<double> auroc_bruteforce(const std::vector<double>& scores, const std::vector<int>& labels);

// Unweighted mean over classes with at least one positive and one negative of
// class-vs-rest AUROC. scores[i][c] is the score of sample i for class c.
// Absent when no class qualifies.
std::optional<double> auroc_ovr(const std::vector<std::vector<double>>& scores, const std::vector<int>& labels);

}  // namespace mlehr::eval
