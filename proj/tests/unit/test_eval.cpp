#include <cmath>

#include "doctest.h"
#include "mlehr/error.hpp"
#include "mlehr/eval/metrics.hpp"
#include "mlehr/eval/report.hpp"
#include "mlehr/util/rng.hpp"

using namespace mlehr;
using namespace mlehr::eval;

TEST_CASE("auroc examples") {
    CHECK(*auroc({0.9, 0.8, 0.3, 0.2}, {1, 1, 0, 0}) == 1.0);
    CHECK(*auroc({0.9, 0.3, 0.8, 0.2}, {1, 1, 0, 0}) == 0.75);
    CHECK(*auroc({0.5, 0.5}, {1, 0}) == 0.5);
    CHECK(!auroc({0.1, 0.2}, {1, 1}).has_value());
    CHECK(!auroc({}, {}).has_value());
    CHECK_THROWS_AS(auroc({0.1}, {2}), Error);
    CHECK_THROWS_AS(auroc({0.1, 0.2}, {1}), Error);
}

TEST_CASE("auroc equals pair counting on every label pattern of eight samples") {
    util::Rng rng(8);
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> scores(8);
        // Coarse grid so ties are frequent.
        for (auto& s : scores) s = static_cast<double>(rng.below(4)) / 4.0;
        for (int mask = 0; mask < 256; ++mask) {
            std::vector<int> labels(8);
            for (int i = 0; i < 8; ++i) labels[static_cast<size_t>(i)] = (mask >> i) & 1;
            auto fast = auroc(scores, labels);
            auto slow = auroc_bruteforce(scores, labels);
            REQUIRE(fast.has_value() == slow.has_value());
            if (fast) CHECK(*fast == *slow);
        }
    }
}

TEST_CASE("auroc is invariant under monotone transforms and complements under label flips") {
    util::Rng rng(3);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> s(30);
        std::vector<int> y(30), flipped(30);
        for (size_t i = 0; i < s.size(); ++i) {
            s[i] = rng.uniform(-2.0, 2.0);
            y[i] = rng.bernoulli(0.4) ? 1 : 0;
            flipped[i] = 1 - y[i];
        }
        auto a = auroc(s, y);
        if (!a) continue;
        std::vector<double> t(s.size());
        for (size_t i = 0; i < s.size(); ++i) t[i] = std::exp(3.0 * s[i]) + 7.0;
        CHECK(*auroc(t, y) == *a);
        CHECK(*a + *auroc(s, flipped) == doctest::Approx(1.0).epsilon(1e-15));
    }
}

TEST_CASE("one-vs-rest auroc") {
    std::vector<std::vector<double>> sep = {{0.9, 0.05, 0.05}, {0.1, 0.8, 0.1}, {0.0, 0.1, 0.9}, {0.7, 0.2, 0.1}};
    CHECK(*auroc_ovr(sep, {0, 1, 2, 0}) == 1.0);
    std::vector<std::vector<double>> uniform(6, std::vector<double>(3, 1.0 / 3.0));
    CHECK(*auroc_ovr(uniform, {0, 1, 2, 0, 1, 2}) == 0.5);
    CHECK(!auroc_ovr({{0.5, 0.5}, {0.4, 0.6}}, {1, 1}).has_value());
    // Five samples; class 2 has no positive and is skipped.
    std::vector<std::vector<double>> s = {{0.6, 0.3, 0.1}, {0.2, 0.5, 0.3}, {0.4, 0.4, 0.2}, {0.1, 0.1, 0.8}, {0.3, 0.6, 0.1}};
    std::vector<int> y = {0, 1, 0, 1, 1};
    double expected = 0.0;
    for (int c = 0; c < 2; ++c) {
        std::vector<double> col;
        std::vector<int> bin;
        for (size_t i = 0; i < s.size(); ++i) {
            col.push_back(s[i][static_cast<size_t>(c)]);
            bin.push_back(y[i] == c ? 1 : 0);
        }
        expected += *auroc_bruteforce(col, bin) / 2.0;
    }
    CHECK(*auroc_ovr(s, y) == doctest::Approx(expected).epsilon(1e-15));
    CHECK_THROWS_AS(auroc_ovr(s, {0, 1, 0, 3, 1}), Error);
}

TEST_CASE("report aggregates tasks before seeds") {
    std::vector<MetricRow> rows;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        rows.push_back({"a", "single", "dict", "t1", seed, 0.7});
        rows.push_back({"a", "single", "dict", "t2", seed, 0.9});
        rows.push_back({"a", "single", "dict", "t3", seed, std::nullopt});
    }
    auto rep = aggregate_report(rows);
    REQUIRE(rep.rows.size() == 1);
    CHECK(rep.rows[0].mean == doctest::Approx(0.8));
    CHECK(rep.rows[0].std == 0.0);
    CHECK(rep.rows[0].degenerate_tasks == std::vector<std::string>{"t3"});
    CHECK(!rep.rows[0].incomplete);
    auto md = report_markdown(rep);
    CHECK(md.find("0.800 (0.000)+") != std::string::npos);
    CHECK(report_markdown(aggregate_report(rows)) == md);

    rows.push_back({"b", "single", "dict", "t1", 0, 0.6});
    auto partial = aggregate_report(rows);
    CHECK(partial.rows[1].incomplete);
    CHECK(report_markdown(partial).find("0.600 (0.000)*") != std::string::npos);
}

TEST_CASE("seed standard deviation is the sample deviation") {
    std::vector<MetricRow> rows = {{"a", "multi", "dict", "t", 0, 0.6}, {"a", "multi", "dict", "t", 1, 0.8}};
    auto rep = aggregate_report(rows);
    CHECK(rep.rows[0].std == doctest::Approx(std::sqrt(0.02)));
}

TEST_CASE("metrics and transfer grid CSVs round trip") {
    std::vector<MetricRow> rows = {{"en", "single", "dict", "mortality_1", 3, 0.1 + 0.2},
                                   {"nl", "multi", "entok", "aki_2", 0, std::nullopt}};
    auto text = metrics_csv(rows);
    CHECK(text.rfind("site,regime,mode,task,seed,auroc\n", 0) == 0);
    CHECK(parse_metrics_csv(text) == rows);
    CHECK_THROWS_AS(parse_metrics_csv("a,b\n1,2\n"), Error);

    TransferGrid g;
    g.sites = {"en", "nl"};
    g.cells[{"en", "en"}] = 0.71234567890123;
    g.cells[{"en", "nl"}] = 2.0 / 3.0;
    g.cells[{"nl", "en"}] = 0.5;
    auto parsed = parse_transfer_grid_csv(transfer_grid_csv(g));
    CHECK(parsed == g);
}

TEST_CASE("langstats CSV lists composition counts") {
    lingua::AlignStats s;
    s.tokens = 10;
    s.skipped = 4;
    s.by_language = {3, 2, 0, 1};
    s.translated = 1;
    auto csv = langstats_csv({{"nl", "dict", s}});
    CHECK(csv.find("nl,dict,10,4,3,2,0,1,1,0.2,0.1") != std::string::npos);
}
