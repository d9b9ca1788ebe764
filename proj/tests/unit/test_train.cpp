#include <cmath>
#include <set>

#include "doctest.h"
#include "json.hpp"
#include "mlehr/core/ingest.hpp"
#include "mlehr/error.hpp"
#include "mlehr/synth/generator.hpp"
#include "mlehr/text/linearize.hpp"
#include "mlehr/train/trainer.hpp"
#include "test_util.hpp"

using namespace mlehr;
using namespace mlehr::train;

namespace {

struct Corpus {
    std::vector<SiteSource> sources;
    std::vector<labels::TaskSpec> tasks = labels::make_tasks(labels::default_cutoffs());
};

Corpus build_corpus(const std::vector<std::pair<std::string, Language>>& sites, int n, double signal,
                    bool with_text = false) {
    synth::GeneratorConfig cfg;
    cfg.signal_strength = signal;
    int variant = 0;
    for (const auto& [id, lang] : sites) {
        synth::SiteConfig s;
        s.site_id = id;
        s.language = lang;
        s.n_stays = n;
        s.schema_variant = variant++ % 3;
        cfg.sites.push_back(s);
    }
    testutil::TempDir dir;
    synth::write_generated(synth::generate(cfg), dir.path());
    Corpus c;
    for (const auto& [id, lang] : sites) {
        auto m = core::parse_manifest(dir.path() / id / "manifest.json");
        auto data = std::make_shared<core::SiteData>(core::ingest_site(m));
        SiteSource src;
        src.site_id = id;
        src.language = lang;
        src.data = data;
        src.labels = labels::label_cohort(data->stays, data->manifest, c.tasks, labels::default_cutoffs(), {}).rows;
        if (with_text) src.corpus = text::linearize_site(*data);
        c.sources.push_back(std::move(src));
    }
    return c;
}

const Corpus& three_sites() {
    static const Corpus c = build_corpus({{"a", Language::en}, {"b", Language::nl}, {"c", Language::de}}, 150, 0.9);
    return c;
}

RunConfig small_run(std::vector<std::string> sites) {
    RunConfig rc;
    rc.source_sites = std::move(sites);
    rc.seeds = 1;
    rc.batch_size = 16;
    rc.learning_rate = 3e-3;
    rc.dropout = 0.0;
    rc.max_steps = 40;
    rc.eval_every = 10;
    rc.patience = 2;
    rc.model.d_model = 8;
    rc.model.n_layers_f = 1;
    rc.model.n_layers_g = 1;
    rc.model.n_heads = 2;
    rc.model.ffn_mult = 2;
    return rc;
}

std::vector<SiteSource> pick(const Corpus& c, std::set<std::string> ids) {
    std::vector<SiteSource> out;
    for (const auto& s : c.sources)
        if (ids.count(s.site_id)) out.push_back(s);
    return out;
}

}  // namespace

TEST_CASE("run config json round trip and validation") {
    RunConfig rc = small_run({"a", "b"});
    rc.regime = Regime::multi;
    rc.site_balanced = true;
    auto back = RunConfig::from_json(rc.to_json());
    CHECK(back.to_json() == rc.to_json());
    CHECK(back.regime == Regime::multi);
    CHECK(back.model.d_model == 8);
    auto extra = RunConfig::from_json(R"({"regime":"transfer","source_sites":["a"],"data_dir":"x"})");
    CHECK(extra.regime == Regime::transfer);
    CHECK(extra.learning_rate == doctest::Approx(1e-4));
    CHECK(extra.dropout == doctest::Approx(0.3));
    CHECK(extra.batch_size == 32);
    RunConfig bad = rc;
    bad.fewshot_fraction = 0.0;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = rc;
    bad.seeds = 0;
    CHECK_THROWS_AS(bad.validate(), Error);
    CHECK(rc.seed_values().size() == 1);
    CHECK_THROWS_AS(parse_regime("pooled"), Error);
}

TEST_CASE("quantile edges and bins") {
    std::vector<double> v;
    for (int i = 1; i <= 9; ++i) v.push_back(i);
    auto edges = quantile_edges(v, 2);
    REQUIRE(edges.size() == 1);
    CHECK(edges[0] == doctest::Approx(5.0));
    CHECK(quantile_bin(edges, 4.9) == 0);
    CHECK(quantile_bin(edges, 5.0) == 0);
    CHECK(quantile_bin(edges, 5.1) == 1);
    auto ten = quantile_edges(v, 10);
    CHECK(ten.size() == 9);
    CHECK(std::is_sorted(ten.begin(), ten.end()));
    CHECK(quantile_bin(ten, 5.0) == 4);
    CHECK(quantile_bin(ten, -100) == 0);
    CHECK(quantile_bin(ten, 100) == 9);
}

TEST_CASE("common grid keeps the last value per hour in canonical units") {
    ICUStay stay;
    stay.stay_id = "s";
    stay.events = {MedicalEvent{"lab", "lab", 10, {{"item", "crea"}, {"value", 88.42}}},
                   MedicalEvent{"lab", "lab", 50, {{"item", "crea"}, {"value", 176.84}}},
                   MedicalEvent{"lab", "lab", 200, {{"item", "crea"}, {"value", 265.26}}},
                   MedicalEvent{"lab", "lab", 900, {{"item", "crea"}, {"value", 1000.0}}}};
    core::SiteManifest m;
    m.common_variable_map["creatinine"] = core::VariableSource{"lab", "value", 1.0 / 88.42, "item", "crea"};
    auto g = common_grid(stay, m, {"creatinine", "heart_rate"}, 12);
    REQUIRE(g.values.size() == 12);
    CHECK(g.values[0][0] == doctest::Approx(2.0));
    CHECK(std::isnan(g.values[1][0]));
    CHECK(g.values[3][0] == doctest::Approx(3.0));
    for (const auto& row : g.values) CHECK(std::isnan(row[1]));
}

TEST_CASE("common featurizer forward fills and flags missing hours") {
    const auto& c = three_sites();
    const SiteSource& a = c.sources[0];
    FitStays fit;
    for (const auto& ls : a.labels) fit[a.site_id].insert(ls.stay_id);
    auto f = fit_common_featurizer({&a}, fit);
    nn::ModelConfig mc;
    f->configure(mc);
    REQUIRE(mc.common_inputs % 2 == 0);
    const size_t k = static_cast<size_t>(mc.common_inputs / 2);
    EventTable table;
    auto enc = f->encode(a, table, {});
    REQUIRE(!enc.stays.empty());
    for (const auto& ex : enc.stays) {
        REQUIRE(ex.events.size() == 12);
        CHECK(ex.minutes.front() == doctest::Approx(30.0));
        CHECK(ex.minutes.back() == doctest::Approx(690.0));
        for (size_t h = 1; h < ex.events.size(); ++h) {
            const auto& prev = table.features(ex.events[h - 1]);
            const auto& row = table.features(ex.events[h]);
            for (size_t v = 0; v < k; ++v)
                if (row[k + v] == 1.0f) CHECK(row[v] == prev[v]);
        }
    }
}

TEST_CASE("code featurizer vocabulary does not transfer across schemas") {
    const auto& c = three_sites();
    const SiteSource& a = c.sources[0];
    const SiteSource& b = c.sources[1];
    FitStays fit;
    for (const auto& ls : a.labels) fit[a.site_id].insert(ls.stay_id);
    auto f = fit_code_featurizer({&a}, fit, 10);
    auto unknown_share = [&](const SiteSource& s) {
        EventTable table;
        auto enc = f->encode(s, table, {});
        double unk = 0, total = 0;
        for (const auto& ex : enc.stays)
            for (int e : ex.events) {
                total += 1;
                if (table.tokens(e).at(0) == 0) unk += 1;
            }
        return unk / total;
    };
    CHECK(unknown_share(a) == 0.0);
    CHECK(unknown_share(b) > 0.9);
}

TEST_CASE("few-shot subset size is patient level and seeded") {
    const auto& c = three_sites();
    FitStays fit;
    for (const auto& ls : c.sources[0].labels) fit["a"].insert(ls.stay_id);
    auto f = fit_common_featurizer({&c.sources[0]}, fit);
    EventTable table;
    auto enc = f->encode(c.sources[0], table, {});
    auto split = split_site(enc, 3);
    std::set<std::string> patients;
    for (const auto* ex : split.train) patients.insert(ex->patient_id);
    auto sub = fewshot_subset(split.train, 0.1, 3, "a");
    std::set<std::string> chosen;
    for (const auto* ex : sub) chosen.insert(ex->patient_id);
    CHECK(chosen.size() == static_cast<size_t>(std::lround(0.1 * static_cast<double>(patients.size()))));
    for (const auto* ex : split.train)
        if (chosen.count(ex->patient_id)) CHECK(std::find(sub.begin(), sub.end(), ex) != sub.end());
    CHECK(fewshot_subset(split.train, 0.1, 3, "a") == sub);
    CHECK(fewshot_subset(split.train, 0.1, 4, "a") != sub);
    CHECK(fewshot_subset(split.train, 0.001, 3, "a").size() >= 1);
    CHECK(fewshot_subset(split.train, 1.0, 3, "a").size() == split.train.size());
}

TEST_CASE("multi regime over two sites keeps one best checkpoint per site") {
    const auto& c = three_sites();
    RunConfig rc = small_run({"a", "b"});
    rc.regime = Regime::multi;
    auto out = train_regime(rc, pick(c, {"a", "b"}), c.tasks, common_factory());
    CHECK(out.models.size() == 2);
    CHECK(out.models.count({"a", 0}) == 1);
    CHECK(out.models.count({"b", 0}) == 1);
    std::set<std::string> sites;
    for (const auto& r : out.metrics) {
        CHECK(r.regime == "multi");
        sites.insert(r.site);
    }
    CHECK(sites == std::set<std::string>{"a", "b"});
    int selected = 0;
    for (const auto& line : out.log)
        if (line.find("\"selected_on\":\"valid:") != std::string::npos) ++selected;
    CHECK(selected == 2);
}

TEST_CASE("identical configs give identical logs, metrics and checkpoints") {
    const auto& c = three_sites();
    RunConfig rc = small_run({"a"});
    rc.dropout = 0.3;
    auto x = train_regime(rc, pick(c, {"a"}), c.tasks, common_factory());
    auto y = train_regime(rc, pick(c, {"a"}), c.tasks, common_factory());
    CHECK(x.log == y.log);
    CHECK(eval::metrics_csv(x.metrics) == eval::metrics_csv(y.metrics));
    CHECK(nn::encode_checkpoint(x.models.at({"a", 0}).checkpoint) ==
          nn::encode_checkpoint(y.models.at({"a", 0}).checkpoint));
    rc.seed_offset = 1;
    auto z = train_regime(rc, pick(c, {"a"}), c.tasks, common_factory());
    CHECK(eval::metrics_csv(x.metrics) != eval::metrics_csv(z.metrics));
}

TEST_CASE("no-signal data stops early near chance") {
    auto c = build_corpus({{"n", Language::en}}, 600, 0.0);
    RunConfig rc = small_run({"n"});
    rc.max_steps = 400;
    auto out = train_regime(rc, c.sources, c.tasks, common_factory());
    auto val = out.val_means.at({"n", 0});
    REQUIRE(val.has_value());
    CHECK(*val > 0.35);
    CHECK(*val < 0.65);
    bool stopped_early = false;
    for (const auto& line : out.log)
        if (line.find("\"event\":\"early_stop\"") != std::string::npos) stopped_early = true;
    CHECK(stopped_early);
}

TEST_CASE("self transfer never loses validation AUROC") {
    const auto& c = three_sites();
    RunConfig rc = small_run({"a"});
    auto single = train_regime(rc, pick(c, {"a"}), c.tasks, common_factory());
    const auto& saved = single.models.at({"a", 0});
    auto sources = pick(c, {"a"});
    auto f = common_factory()({&sources[0]}, training_stays(sources[0], 0));
    auto meta = nlohmann::json::parse(saved.checkpoint.metadata);
    CHECK(meta.at("featurizer") == nlohmann::json::parse(f->metadata_json()));
    auto ft = finetune(saved.checkpoint, rc, sources[0], *f, 1.0, 0, "self");
    REQUIRE(saved.val_auroc.has_value());
    REQUIRE(ft.model.val_auroc.has_value());
    CHECK(*ft.model.val_auroc >= *saved.val_auroc - 0.01);
}

TEST_CASE("transfer grid diagonal equals the single regime and round trips") {
    const auto& c = three_sites();
    RunConfig rc = small_run({"a", "b", "c"});
    rc.max_steps = 20;
    auto single = train_regime(rc, c.sources, c.tasks, common_factory());
    rc.regime = Regime::transfer;
    auto t = transfer_matrix(rc, c.sources, c.tasks, common_factory(), single);
    CHECK(t.grid.sites.size() == 3);
    for (const auto& s : t.grid.sites) {
        REQUIRE(t.grid.cells.count({s, s}) == 1);
        CHECK(t.grid.cells.at({s, s}) == *mean_test_auroc(single.metrics, s, "single"));
        CHECK(t.scratch.cells.count({s, s}) == 1);
    }
    CHECK(t.grid.cells.size() == 9);
    auto text = eval::transfer_grid_csv(t.grid);
    CHECK(eval::transfer_grid_csv(eval::parse_transfer_grid_csv(text)) == text);
    auto parsed = eval::parse_transfer_grid_csv(text);
    for (const auto& [k, v] : t.grid.cells) CHECK(parsed.cells.at(k) == v);
    RunOutput empty;
    CHECK_THROWS_AS(transfer_matrix(rc, c.sources, c.tasks, common_factory(), empty), Error);
}
