#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mlehr/lingua/translate.hpp"

namespace mlehr::eval {

// One line of metrics.csv; auroc is empty when the task was degenerate.
struct MetricRow {
    std::string site;
    std::string regime;
    std::string mode;
    std::string task;
    std::uint64_t seed = 0;
    std::optional<double> auroc;
    bool operator==(const MetricRow&) const = default;
};

std::string metrics_csv(const std::vector<MetricRow>& rows);
std::vector<MetricRow> parse_metrics_csv(const std::string& text, const std::string& source = "<metrics>");

// Mean over tasks with a value; absent when none has one.
std::optional<double> task_mean(const std::vector<MetricRow>& rows);

struct ReportRow {
    std::string site;
    std::string regime;
    std::string mode;
    std::vector<std::uint64_t> seeds;
    std::vector<double> seed_means;  // task mean per seed
    double mean = 0.0;
    double std = 0.0;                 // sample standard deviation over seeds; 0 for one seed
    std::vector<std::string> degenerate_tasks;  // absent in at least one seed
    bool incomplete = false;          // fewer seeds than expected
};

struct Report {
    std::vector<ReportRow> rows;  // ordered by (regime, mode, site)
    std::map<std::string, std::map<std::string, double>> per_task;  // "site/regime/mode" -> task -> mean over seeds
    size_t expected_seeds = 0;
};

// Groups by (site, regime, mode); task mean first, then mean and standard
// deviation across seeds. expected_seeds 0 means the largest seed count seen.
Report aggregate_report(const std::vector<MetricRow>& rows, size_t expected_seeds = 0);
std::string report_csv(const Report& report);
std::string report_markdown(const Report& report);
std::string per_task_csv(const Report& report);

// Language composition of one site's corpus before alignment.
struct LangStatsRow {
    std::string site;
    std::string mode;
    lingua::AlignStats stats;
};
std::string langstats_csv(const std::vector<LangStatsRow>& rows);

// Square source x target grid; missing cells are empty.
struct TransferGrid {
    std::vector<std::string> sites;
    std::map<std::pair<std::string, std::string>, double> cells;  // (source, target) -> AUROC
    bool operator==(const TransferGrid&) const = default;
};
std::string transfer_grid_csv(const TransferGrid& grid);
TransferGrid parse_transfer_grid_csv(const std::string& text, const std::string& source = "<grid>");

}  // namespace mlehr::eval
