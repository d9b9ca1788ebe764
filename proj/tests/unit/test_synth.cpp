#include "doctest.h"

#include "mlehr/core/ingest.hpp"
#include "mlehr/core/manifest.hpp"
#include "mlehr/error.hpp"
#include "mlehr/labels/labels.hpp"
#include "mlehr/synth/generator.hpp"
#include "mlehr/util/csv.hpp"
#include <set>

#include "test_util.hpp"

using namespace mlehr;
using mlehr::synth::GeneratorConfig;
using mlehr::synth::SiteConfig;

namespace {

GeneratorConfig one_site(int n, int variant, Language lang = Language::en) {
    GeneratorConfig c;
    SiteConfig s;
    s.site_id = "a";
    s.language = lang;
    s.n_stays = n;
    s.schema_variant = variant;
    c.sites.push_back(s);
    return c;
}

core::SiteData ingest_generated(const synth::GeneratedData& data, const testutil::TempDir& dir, size_t i = 0) {
    synth::write_generated(data, dir.path());
    auto m = core::parse_manifest(dir.path() / data.sites[i].config.site_id / "manifest.json");
    return core::ingest_site(m);
}

}  // namespace

TEST_CASE("generator is deterministic") {
    auto cfg = one_site(60, 1, Language::nl);
    auto a = synth::generate(cfg);
    auto b = synth::generate(cfg);
    CHECK(a.sites[0].files == b.sites[0].files);
    CHECK(synth::ground_truth_json(a.truth) == synth::ground_truth_json(b.truth));
    cfg.noise_seed = 7;
    auto c = synth::generate(cfg);
    CHECK(a.sites[0].files != c.sites[0].files);
}

TEST_CASE("generator config parsing") {
    auto c = synth::parse_generator_config(
        R"({"sites":[{"site_id":"x","language":"de","n_stays":5,"schema_variant":2}],"signal_strength":0.5})");
    CHECK(c.sites.size() == 1);
    CHECK(c.sites[0].language == Language::de);
    CHECK(c.signal_strength == doctest::Approx(0.5));
    CHECK_THROWS_AS(synth::parse_generator_config(R"({"sites":[{"site_id":"x"}],"bogus":1})"), Error);
    CHECK_THROWS_AS(synth::parse_generator_config(R"({"sites":[{"site_id":"x","schema_variant":5}]})"), Error);
    CHECK_THROWS_AS(synth::parse_generator_config(R"({"sites":[]})"), Error);
}

TEST_CASE("ingested event count matches ground truth for every schema variant") {
    for (int variant = 0; variant < 3; ++variant) {
        CAPTURE(variant);
        auto cfg = one_site(80, variant, variant == 0 ? Language::en : variant == 1 ? Language::nl : Language::de);
        cfg.invalid_timestamp_rate = 0.01;
        auto data = synth::generate(cfg);
        testutil::TempDir dir;
        auto site = ingest_generated(data, dir);
        const auto& t = data.truth.sites[0];
        CHECK(site.stays.size() == t.n_stays);
        CHECK(site.report.events == t.event_rows);
        CHECK(site.report.dropped_bad_timestamp == t.invalid_timestamp_rows);
        CHECK(site.report.dropped_unknown_stay == 0);
        CHECK(t.invalid_timestamp_rows > 0);
    }
}

TEST_CASE("sibling sites differ only by lexicon substitution") {
    GeneratorConfig cfg;
    for (auto [id, lang] : {std::pair{"en", Language::en}, std::pair{"nl", Language::nl}, std::pair{"de", Language::de}}) {
        SiteConfig s;
        s.site_id = id;
        s.language = lang;
        s.n_stays = 40;
        s.schema_variant = 0;
        s.seed = "shared";
        s.english_fraction = 0.0;
        cfg.sites.push_back(s);
    }
    auto data = synth::generate(cfg);
    const auto& lex = data.truth.lexicon;
    for (size_t k = 1; k < 3; ++k) {
        const Language lang = data.sites[k].config.language;
        REQUIRE(data.sites[0].files.size() == data.sites[k].files.size());
        size_t substituted = 0;
        for (const auto& [name, text] : data.sites[0].files) {
            auto en_rows = util::parse_csv(text, name).rows;
            auto other_rows = util::parse_csv(data.sites[k].files.at(name), name).rows;
            REQUIRE(en_rows.size() == other_rows.size());
            for (size_t r = 0; r < en_rows.size(); ++r) {
                REQUIRE(en_rows[r].size() == other_rows[r].size());
                for (size_t c = 0; c < en_rows[r].size(); ++c) {
                    if (en_rows[r][c] == other_rows[r][c]) continue;
                    auto it = lex.at(lang).find(other_rows[r][c]);
                    REQUIRE(it != lex.at(lang).end());
                    CHECK(it->second == en_rows[r][c]);
                    ++substituted;
                }
            }
        }
        CHECK(substituted > 100);
    }
}

TEST_CASE("lexicon is a bijection per language") {
    auto data = synth::generate(one_site(2, 0));
    for (const auto& [lang, m] : data.truth.lexicon) {
        std::set<std::string> targets;
        for (const auto& [w, en] : m) targets.insert(en);
        CHECK(targets.size() == m.size());
        CHECK(m.size() == synth::clinical_terms().size());
    }
    auto tsv = synth::lexicon_tsv(data.truth, {Language::nl});
    CHECK(tsv.find("nl\tkreatinine\tcreatinine\n") != std::string::npos);
}

TEST_CASE("english fraction leaves that share of terms untranslated") {
    auto cfg = one_site(5, 0, Language::nl);
    cfg.sites[0].english_fraction = 0.5;
    auto data = synth::generate(cfg);
    CHECK(data.truth.sites[0].english_terms.size() == 14);
}

TEST_CASE("generated cohort hits outcome prevalence and exclusion counts") {
    auto cfg = one_site(3000, 0);
    auto data = synth::generate(cfg);
    testutil::TempDir dir;
    auto site = ingest_generated(data, dir);
    labels::WindowConfig w;
    auto cohort = labels::build_cohort(site.stays, w);
    const auto& truth = data.truth.sites[0];
    for (const auto& [reason, n] : truth.exclusions) {
        CAPTURE(reason);
        CHECK(cohort.excluded[reason] == n);
    }
    double died = 0, long_stay = 0;
    for (const auto& s : cohort.stays) {
        died += labels::label_mortality(s, 14, w);
        long_stay += labels::label_los(s, 7, w);
    }
    const double n = static_cast<double>(cohort.stays.size());
    CHECK(std::abs(died / n - cfg.mortality_14_target) <= 0.03);
    CHECK(std::abs(long_stay / n - cfg.los_7_target) <= 0.03);
}

TEST_CASE("stays that die have higher follow-up creatinine") {
    auto cfg = one_site(1500, 0);
    auto data = synth::generate(cfg);
    testutil::TempDir dir;
    auto site = ingest_generated(data, dir);
    labels::WindowConfig w;
    auto cohort = labels::build_cohort(site.stays, w);
    double sum_d = 0, n_d = 0, sum_s = 0, n_s = 0;
    for (const auto& s : cohort.stays) {
        auto obs = labels::observe(s, site.manifest);
        auto it = obs.analytes.find("creatinine");
        if (it == obs.analytes.end()) continue;
        for (const auto& m : it->second) {
            if (m.minute <= w.t0_minutes()) continue;
            if (labels::label_mortality(s, 14, w) == 1) {
                sum_d += m.value, n_d += 1;
            } else {
                sum_s += m.value, n_s += 1;
            }
        }
    }
    REQUIRE(n_d > 20);
    REQUIRE(n_s > 20);
    CHECK(sum_d / n_d > sum_s / n_s + 0.2);
}
