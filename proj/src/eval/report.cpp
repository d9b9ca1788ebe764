#include "mlehr/eval/report.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "mlehr/error.hpp"
#include "mlehr/util/csv.hpp"
#include "mlehr/util/strings.hpp"

namespace mlehr::eval {

std::string metrics_csv(const std::vector<MetricRow>& rows) {
    std::string out = util::csv_line({"site", "regime", "mode", "task", "seed", "auroc"});
    for (const auto& r : rows)
        out += util::csv_line({r.site, r.regime, r.mode, r.task, std::to_string(r.seed),
                               r.auroc ? util::format_double(*r.auroc) : std::string()});
    return out;
}

std::vector<MetricRow> parse_metrics_csv(const std::string& text, const std::string& source) {
    auto table = util::parse_csv(text, source);
    const std::vector<std::string> want = {"site", "regime", "mode", "task", "seed", "auroc"};
    if (table.header != want) fail("CsvParse", source + ": unexpected metrics header");
    std::vector<MetricRow> rows;
    for (size_t i = 0; i < table.rows.size(); ++i) {
        const auto& f = table.rows[i];
        MetricRow r{f[0], f[1], f[2], f[3], 0, std::nullopt};
        auto seed = util::parse_int(f[4]);
        if (!seed || *seed < 0) fail("CsvParse", source + ":" + std::to_string(i + 2) + " seed");
        r.seed = static_cast<std::uint64_t>(*seed);
        if (!f[5].empty()) {
            auto v = util::parse_double(f[5]);
            if (!v) fail("CsvParse", source + ":" + std::to_string(i + 2) + " auroc");
            r.auroc = *v;
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

std::optional<double> task_mean(const std::vector<MetricRow>& rows) {
    double sum = 0.0;
    size_t n = 0;
    for (const auto& r : rows)
        if (r.auroc) {
            sum += *r.auroc;
            ++n;
        }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
}

Report aggregate_report(const std::vector<MetricRow>& rows, size_t expected_seeds) {
    using Key = std::tuple<std::string, std::string, std::string>;  // regime, mode, site
    std::map<Key, std::map<std::uint64_t, std::vector<MetricRow>>> groups;
    for (const auto& r : rows) groups[{r.regime, r.mode, r.site}][r.seed].push_back(r);
    Report rep;
    size_t most = 0;
    for (const auto& [k, seeds] : groups) most = std::max(most, seeds.size());
    rep.expected_seeds = expected_seeds ? expected_seeds : most;
    for (const auto& [key, seeds] : groups) {
        ReportRow row;
        std::tie(row.regime, row.mode, row.site) = key;
        std::set<std::string> degenerate;
        std::map<std::string, std::pair<double, size_t>> task_sums;
        for (const auto& [seed, list] : seeds) {
            for (const auto& r : list) {
                if (!r.auroc) {
                    degenerate.insert(r.task);
                    continue;
                }
                auto& ts = task_sums[r.task];
                ts.first += *r.auroc;
                ts.second += 1;
            }
            auto m = task_mean(list);
            if (!m) continue;
            row.seeds.push_back(seed);
            row.seed_means.push_back(*m);
        }
        row.degenerate_tasks.assign(degenerate.begin(), degenerate.end());
        row.incomplete = row.seeds.size() < rep.expected_seeds;
        if (!row.seed_means.empty()) {
            double n = static_cast<double>(row.seed_means.size());
            double sum = 0.0;
            for (double v : row.seed_means) sum += v;
            row.mean = sum / n;
            if (row.seed_means.size() > 1) {
                double ss = 0.0;
                for (double v : row.seed_means) ss += (v - row.mean) * (v - row.mean);
                row.std = std::sqrt(ss / (n - 1.0));
            }
        }
        auto& pt = rep.per_task[row.site + "/" + row.regime + "/" + row.mode];
        for (const auto& [task, s] : task_sums) pt[task] = s.first / static_cast<double>(s.second);
        rep.rows.push_back(std::move(row));
    }
    return rep;
}

namespace {

std::string fixed(double v, int digits) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(digits);
    os << v;
    return os.str();
}

}  // namespace

std::string report_csv(const Report& report) {
    std::string out = util::csv_line({"site", "regime", "mode", "seeds", "mean_auroc", "std_auroc", "incomplete", "degenerate_tasks"});
    for (const auto& r : report.rows)
        out += util::csv_line({r.site, r.regime, r.mode, std::to_string(r.seeds.size()), util::format_double(r.mean),
                               util::format_double(r.std), r.incomplete ? "1" : "0", util::join(r.degenerate_tasks, ";")});
    return out;
}

std::string report_markdown(const Report& report) {
    std::set<std::string> sites;
    std::set<std::pair<std::string, std::string>> configs;
    std::map<std::tuple<std::string, std::string, std::string>, const ReportRow*> cell;
    for (const auto& r : report.rows) {
        sites.insert(r.site);
        configs.insert({r.regime, r.mode});
        cell[{r.regime, r.mode, r.site}] = &r;
    }
    std::string out = "# AUROC report\n\nMean over tasks, then over seeds; seed standard deviation in parentheses.\n\n";
    out += "| regime | mode |";
    for (const auto& s : sites) out += " " + s + " |";
    out += " avg |\n|---|---|";
    for (size_t i = 0; i <= sites.size(); ++i) out += "---|";
    out += "\n";
    bool any_incomplete = false, any_degenerate = false;
    for (const auto& [regime, mode] : configs) {
        out += "| " + regime + " | " + mode + " |";
        double sum = 0.0;
        size_t n = 0;
        for (const auto& s : sites) {
            auto it = cell.find({regime, mode, s});
            if (it == cell.end() || it->second->seed_means.empty()) {
                out += " - |";
                continue;
            }
            const auto& r = *it->second;
            std::string mark;
            if (r.incomplete) {
                mark += "*";
                any_incomplete = true;
            }
            if (!r.degenerate_tasks.empty()) {
                mark += "+";
                any_degenerate = true;
            }
            out += " " + fixed(r.mean, 3) + " (" + fixed(r.std, 3) + ")" + mark + " |";
            sum += r.mean;
            ++n;
        }
        out += n ? " " + fixed(sum / static_cast<double>(n), 3) + " |\n" : " - |\n";
    }
    if (any_incomplete || any_degenerate) out += "\n";
    if (any_incomplete) out += "\\* fewer than " + std::to_string(report.expected_seeds) + " seeds completed.\n\n";
    if (any_degenerate) {
        out += "\\+ tasks with a single class in a test split are left out of the task mean:\n\n";
        for (const auto& r : report.rows)
            if (!r.degenerate_tasks.empty())
                out += "- " + r.site + " / " + r.regime + " / " + r.mode + ": " + util::join(r.degenerate_tasks, ", ") + "\n";
    }
    return out;
}

std::string per_task_csv(const Report& report) {
    std::string out = util::csv_line({"group", "task", "mean_auroc"});
    for (const auto& [group, tasks] : report.per_task)
        for (const auto& [task, v] : tasks) out += util::csv_line({group, task, util::format_double(v)});
    return out;
}

std::string langstats_csv(const std::vector<LangStatsRow>& rows) {
    std::string out = util::csv_line({"site", "mode", "tokens", "skipped", "en", "nl", "de", "undetected", "translated",
                                      "foreign_rate", "residual_rate"});
    for (const auto& r : rows) {
        const auto& s = r.stats;
        out += util::csv_line({r.site, r.mode, std::to_string(s.tokens), std::to_string(s.skipped),
                               std::to_string(s.by_language[0]), std::to_string(s.by_language[1]),
                               std::to_string(s.by_language[2]), std::to_string(s.by_language[3]),
                               std::to_string(s.translated), util::format_double(s.foreign_rate()),
                               util::format_double(s.residual_rate())});
    }
    return out;
}

std::string transfer_grid_csv(const TransferGrid& grid) {
    std::vector<std::string> header = {"source"};
    header.insert(header.end(), grid.sites.begin(), grid.sites.end());
    std::string out = util::csv_line(header);
    for (const auto& s : grid.sites) {
        std::vector<std::string> line = {s};
        for (const auto& t : grid.sites) {
            auto it = grid.cells.find({s, t});
            line.push_back(it == grid.cells.end() ? std::string() : util::format_double(it->second));
        }
        out += util::csv_line(line);
    }
    return out;
}

TransferGrid parse_transfer_grid_csv(const std::string& text, const std::string& source) {
    auto table = util::parse_csv(text, source);
    if (table.header.empty() || table.header[0] != "source") fail("CsvParse", source + ": missing source column");
    TransferGrid g;
    g.sites.assign(table.header.begin() + 1, table.header.end());
    for (const auto& row : table.rows) {
        for (size_t c = 1; c < row.size(); ++c) {
            if (row[c].empty()) continue;
            auto v = util::parse_double(row[c]);
            if (!v) fail("CsvParse", source + ": cell " + row[0] + "/" + g.sites[c - 1]);
            g.cells[{row[0], g.sites[c - 1]}] = *v;
        }
    }
    return g;
}

}  // namespace mlehr::eval
