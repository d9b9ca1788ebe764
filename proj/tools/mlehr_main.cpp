#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mlehr/core/ingest.hpp"
#include "mlehr/core/manifest.hpp"
#include "mlehr/core/store.hpp"
#include "mlehr/error.hpp"
#include "mlehr/eval/report.hpp"
#include "mlehr/labels/labels.hpp"
#include "mlehr/lingua/identify.hpp"
#include "mlehr/lingua/translate.hpp"
#include "mlehr/synth/generator.hpp"
#include "mlehr/text/linearize.hpp"
#include "mlehr/tok/bpe.hpp"
#include "mlehr/train/trainer.hpp"
#include "mlehr/util/fs.hpp"
#include "mlehr/util/strings.hpp"

using namespace mlehr;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Globals {
    int jobs = 1;
    std::optional<std::uint64_t> seed;
};

// Store paths: a file, or every *.store file in a directory (sorted).
std::vector<fs::path> store_files(const fs::path& p) {
    if (!fs::is_directory(p)) {
        if (!fs::exists(p)) fail("MissingFile", p.string());
        return {p};
    }
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(p))
        if (e.path().extension() == ".store") out.push_back(e.path());
    std::sort(out.begin(), out.end());
    if (out.empty()) fail("MissingFile", "no .store files in " + p.string());
    return out;
}

labels::WindowConfig window_config(const std::string& path) {
    return path.empty() ? labels::WindowConfig{} : labels::parse_window_config(util::read_text(path));
}

labels::CutoffTable cutoff_table(const std::string& path) {
    return path.empty() ? labels::default_cutoffs() : labels::load_cutoffs(path);
}

void print_json(const json& j) { std::cout << j.dump() << "\n"; }

int run_synth(const std::string& config, const std::string& out, const Globals& g) {
    auto cfg = synth::parse_generator_config(util::read_text(config));
    if (g.seed) cfg.noise_seed = *g.seed;
    auto data = synth::generate(cfg);
    synth::write_generated(data, out);
    json sites = json::array();
    for (const auto& s : data.truth.sites) sites.push_back({{"site", s.site_id}, {"stays", s.n_stays}, {"rows", s.event_rows}});
    print_json({{"command", "synth"}, {"out", out}, {"sites", sites}});
    return 0;
}

int run_ingest(const std::string& manifest, const std::string& out) {
    auto m = core::parse_manifest(manifest);
    auto data = core::ingest_site(m);
    util::ensure_dir(out);
    fs::path path = fs::path(out) / (m.site_id + ".store");
    core::save_store(data, path);
    const auto& r = data.report;
    print_json({{"command", "ingest"},
                {"site", m.site_id},
                {"store", path.string()},
                {"stays", data.stays.size()},
                {"rows_read", r.rows_read},
                {"events", r.events},
                {"dropped_bad_timestamp", r.dropped_bad_timestamp},
                {"dropped_unknown_stay", r.dropped_unknown_stay},
                {"dropped_empty", r.dropped_empty}});
    return 0;
}

int run_cohort(const std::string& store, const std::string& windows, const std::string& cutoffs_path,
               const std::string& out) {
    auto w = window_config(windows);
    auto cutoffs = cutoff_table(cutoffs_path);
    auto tasks = labels::make_tasks(cutoffs);
    util::ensure_dir(out);
    for (const auto& file : store_files(store)) {
        auto data = core::load_store(file);
        const std::string site = data.manifest.site_id;
        auto cohort = labels::label_cohort(data.stays, data.manifest, tasks, cutoffs, w);
        util::atomic_write(fs::path(out) / (site + ".labels.csv"), labels::labels_csv(tasks, cohort.rows));
        util::atomic_write(fs::path(out) / (site + ".label_stats.csv"), labels::label_stats_csv(tasks, cohort.rows));
        print_json({{"command", "cohort"}, {"site", site}, {"stays", cohort.rows.size()}, {"excluded", cohort.excluded}});
    }
    return 0;
}

int run_linearize(const std::string& store, const std::string& out) {
    util::ensure_dir(out);
    for (const auto& file : store_files(store)) {
        auto data = core::load_store(file);
        auto corpus = text::linearize_site(data);
        fs::path path = fs::path(out) / (data.manifest.site_id + ".tsv");
        util::atomic_write(path, text::corpus_tsv(corpus));
        print_json({{"command", "linearize"}, {"site", data.manifest.site_id}, {"records", corpus.size()}, {"corpus", path.string()}});
    }
    return 0;
}

struct AlignArgs {
    std::string corpus, mode = "dict", dict, cache, language = "en", out, langstats, site;
};

int run_align(const AlignArgs& a, const Globals& g) {
    auto mode = lingua::parse_align_mode(a.mode);
    const Language lang = parse_language(a.language);
    auto records = text::parse_corpus_tsv(util::read_text(a.corpus), a.corpus);

    std::unique_ptr<lingua::HttpCompletionClient> client;
    std::unique_ptr<lingua::TranslationCache> cache;
    std::unique_ptr<lingua::ServiceTranslator> service;
    if (mode == lingua::AlignMode::service) {
        client = lingua::HttpCompletionClient::from_environment();
        cache = a.cache.empty() ? std::make_unique<lingua::TranslationCache>()
                                : std::make_unique<lingua::TranslationCache>(a.cache);
        service = std::make_unique<lingua::ServiceTranslator>(*client, *cache);
    }
    lingua::DictionaryStack dict = a.dict.empty()
                                       ? lingua::DictionaryStack::bundled()
                                       : lingua::DictionaryStack({lingua::BilingualDictionary::load(a.dict)});
    lingua::Aligner aligner(lingua::LanguageIdentifier::bundled(), lang, &dict, service.get());
    lingua::AlignStats stats;
    auto aligned = lingua::align_corpus(records, aligner, mode, static_cast<size_t>(std::max(1, g.jobs)), &stats);

    fs::path out = a.out;
    if (out.empty()) {
        fs::path in(a.corpus);
        out = in.parent_path() / (in.stem().string() + "." + a.mode + ".tsv");
    }
    if (!out.parent_path().empty()) util::ensure_dir(out.parent_path());
    util::atomic_write(out, text::corpus_tsv(aligned));
    const std::string site = a.site.empty() ? fs::path(a.corpus).stem().string() : a.site;
    if (!a.langstats.empty()) util::atomic_write(a.langstats, eval::langstats_csv({{site, a.mode, stats}}));
    print_json({{"command", "align"},
                {"site", site},
                {"mode", a.mode},
                {"out", out.string()},
                {"tokens", stats.tokens},
                {"foreign_rate", stats.foreign_rate()},
                {"residual_rate", stats.residual_rate()},
                {"service_fallbacks", stats.service_fallbacks}});
    return 0;
}

int run_tokenizer_train(const std::vector<std::string>& corpora, size_t vocab_size, const std::string& protected_path,
                        const std::string& out) {
    std::vector<std::string> lines;
    for (const auto& c : corpora)
        for (auto& r : text::parse_corpus_tsv(util::read_text(c), c)) lines.push_back(std::move(r.text));
    std::vector<std::string> prot;
    if (protected_path.empty()) {
        prot = text::protected_vocabulary();
    } else {
        std::istringstream in(util::read_text(protected_path));
        for (std::string line; std::getline(in, line);) {
            line = std::string(util::trim(line));
            if (!line.empty()) prot.push_back(line);
        }
    }
    auto tok = tok::Tokenizer::train(lines, vocab_size, prot);
    fs::path path(out);
    if (!path.parent_path().empty()) util::ensure_dir(path.parent_path());
    tok.save(path);
    print_json({{"command", "tokenizer train"}, {"lines", lines.size()}, {"types", tok.type_count()}, {"out", out}});
    return 0;
}

// Data half of a run config: where each site's inputs live.
struct RunData {
    struct Site {
        std::string site_id;
        std::string store, labels, corpus;
    };
    std::vector<Site> sites;
    std::string tokenizer, out, windows, cutoffs, single_dir;
    int bins = 10;
};

RunData parse_run_data(const std::string& text, const fs::path& base) {
    json j = json::parse(text);
    auto resolve = [&](const std::string& p) { return p.empty() || fs::path(p).is_absolute() ? p : (base / p).string(); };
    RunData d;
    if (!j.contains("sites") || !j.at("sites").is_array()) fail("InvalidConfig", "run config needs a sites array");
    for (const auto& s : j.at("sites")) {
        RunData::Site site;
        site.site_id = s.at("site_id").get<std::string>();
        site.store = resolve(s.at("store").get<std::string>());
        site.labels = resolve(s.value("labels", ""));
        site.corpus = resolve(s.value("corpus", ""));
        d.sites.push_back(std::move(site));
    }
    d.tokenizer = resolve(j.value("tokenizer", ""));
    d.out = resolve(j.value("out", "run"));
    d.windows = resolve(j.value("windows", ""));
    d.cutoffs = resolve(j.value("cutoffs", ""));
    d.single_dir = resolve(j.value("single_dir", ""));
    d.bins = j.value("bins", 10);
    return d;
}

struct LoadedRun {
    train::RunConfig config;
    RunData data;
    std::vector<labels::TaskSpec> tasks;
    std::vector<train::SiteSource> sources;
    train::FeaturizerFactory factory;
};

LoadedRun load_run(const std::string& path, const Globals& g) {
    LoadedRun run;
    const std::string text = util::read_text(path);
    run.config = train::RunConfig::from_json(text);
    if (g.seed) run.config.seed_offset = *g.seed;
    run.data = parse_run_data(text, fs::path(path).parent_path());
    if (run.config.source_sites.empty())
        for (const auto& s : run.data.sites) run.config.source_sites.push_back(s.site_id);
    run.config.validate();
    auto cutoffs = cutoff_table(run.data.cutoffs);
    auto w = window_config(run.data.windows);
    run.tasks = labels::make_tasks(cutoffs);
    const bool text_kind = run.config.model.kind == nn::EncoderKind::text;
    for (const auto& s : run.data.sites) {
        train::SiteSource src;
        src.site_id = s.site_id;
        auto data = std::make_shared<core::SiteData>(core::load_store(s.store));
        if (data->manifest.site_id != s.site_id)
            fail("InvalidConfig", "store " + s.store + " holds site " + data->manifest.site_id);
        src.language = data->manifest.language;
        src.labels = s.labels.empty() ? labels::label_cohort(data->stays, data->manifest, run.tasks, cutoffs, w).rows
                                      : labels::parse_labels_csv(util::read_text(s.labels), run.tasks);
        if (text_kind) {
            if (s.corpus.empty()) fail("InvalidConfig", "text encoder needs a corpus for site " + s.site_id);
            src.corpus = text::parse_corpus_tsv(util::read_text(s.corpus), s.corpus);
        }
        src.data = std::move(data);
        run.sources.push_back(std::move(src));
    }
    switch (run.config.model.kind) {
        case nn::EncoderKind::text: {
            if (run.data.tokenizer.empty()) fail("InvalidConfig", "text encoder needs a tokenizer");
            run.factory = train::text_factory(std::make_shared<tok::Tokenizer>(tok::Tokenizer::load(run.data.tokenizer)));
            break;
        }
        case nn::EncoderKind::code_based: run.factory = train::code_factory(run.data.bins); break;
        case nn::EncoderKind::common_feature: run.factory = train::common_factory(); break;
    }
    return run;
}

fs::path checkpoint_path(const fs::path& dir, const std::string& site, std::uint64_t seed) {
    return dir / "checkpoints" / (site + "_seed" + std::to_string(seed) + ".ckpt");
}

std::string join_lines(const std::vector<std::string>& lines) {
    std::string out;
    for (const auto& l : lines) out += l + "\n";
    return out;
}

int run_train(const std::string& run_config, const Globals& g) {
    auto run = load_run(run_config, g);
    if (run.config.regime == train::Regime::transfer) fail("InvalidConfig", "use the transfer command for regime transfer");
    auto out = train::train_regime(run.config, run.sources, run.tasks, run.factory, g.jobs);
    const fs::path dir(run.data.out);
    util::ensure_dir(dir / "checkpoints");
    for (const auto& [key, saved] : out.models) nn::save_checkpoint(saved.checkpoint, checkpoint_path(dir, key.first, key.second));
    util::atomic_write(dir / "metrics.csv", eval::metrics_csv(out.metrics));
    util::atomic_write(dir / "log.jsonl", join_lines(out.log));
    util::atomic_write(dir / "run_config.json", run.config.to_json());
    json summary = json::object();
    for (const auto& site : run.config.source_sites) {
        auto m = train::mean_test_auroc(out.metrics, site, train::to_string(run.config.regime));
        summary[site] = m ? json(*m) : json(nullptr);
    }
    print_json({{"command", "train"}, {"out", dir.string()}, {"test_task_mean", summary}});
    return 0;
}

int run_transfer(const std::string& run_config, const Globals& g) {
    auto run = load_run(run_config, g);
    if (run.data.single_dir.empty()) fail("InvalidConfig", "transfer needs single_dir with single-regime outputs");
    const fs::path single_dir(run.data.single_dir);
    train::RunOutput single;
    const fs::path metrics = single_dir / "metrics.csv";
    if (!fs::exists(metrics)) fail("MissingCheckpoint", metrics.string());
    for (auto& row : eval::parse_metrics_csv(util::read_text(metrics), metrics.string()))
        if (row.regime == "single") single.metrics.push_back(std::move(row));
    for (const auto& site : run.config.source_sites)
        for (auto seed : run.config.seed_values()) {
            auto p = checkpoint_path(single_dir, site, seed);
            if (!fs::exists(p)) fail("MissingCheckpoint", p.string());
            single.models[{site, seed}] = train::SavedModel{nn::load_checkpoint(p), 0, std::nullopt};
        }
    auto out = train::transfer_matrix(run.config, run.sources, run.tasks, run.factory, single, g.jobs);
    const fs::path dir(run.data.out);
    util::ensure_dir(dir);
    util::atomic_write(dir / "transfer_grid.csv", eval::transfer_grid_csv(out.grid));
    util::atomic_write(dir / "scratch_grid.csv", eval::transfer_grid_csv(out.scratch));
    util::atomic_write(dir / "metrics.csv", eval::metrics_csv(out.metrics));
    util::atomic_write(dir / "log.jsonl", join_lines(out.log));
    print_json({{"command", "transfer"}, {"out", dir.string()}});
    return 0;
}

std::vector<fs::path> find_files(const fs::path& root, const std::string& suffix) {
    std::vector<fs::path> out;
    if (!fs::is_directory(root)) fail("MissingFile", root.string());
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        const std::string name = e.path().filename().string();
        if (e.is_regular_file() && name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
            out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

// Concatenates CSV files that share a header.
std::string merge_csv(const std::vector<fs::path>& files) {
    std::string header, body;
    for (const auto& f : files) {
        std::istringstream in(util::read_text(f));
        std::string line;
        if (!std::getline(in, line)) continue;
        if (header.empty()) header = line;
        else if (line != header) fail("CsvParse", f.string() + ": header differs");
        while (std::getline(in, line))
            if (!line.empty()) body += line + "\n";
    }
    return header.empty() ? std::string() : header + "\n" + body;
}

int run_report(const std::string& logs, const std::string& out, int expected_seeds) {
    std::vector<eval::MetricRow> rows;
    for (const auto& f : find_files(logs, "metrics.csv")) {
        auto part = eval::parse_metrics_csv(util::read_text(f), f.string());
        rows.insert(rows.end(), part.begin(), part.end());
    }
    if (rows.empty()) fail("MissingFile", "no metrics.csv under " + logs);
    auto report = eval::aggregate_report(rows, static_cast<size_t>(std::max(0, expected_seeds)));
    const fs::path dir(out);
    util::ensure_dir(dir);
    util::atomic_write(dir / "report.csv", eval::report_csv(report));
    util::atomic_write(dir / "report.md", eval::report_markdown(report));
    util::atomic_write(dir / "per_task.csv", eval::per_task_csv(report));
    if (auto lang = merge_csv(find_files(logs, "langstats.csv")); !lang.empty()) util::atomic_write(dir / "langstats.csv", lang);
    auto grids = find_files(logs, "transfer_grid.csv");
    for (const auto& f : grids) {
        auto grid = eval::parse_transfer_grid_csv(util::read_text(f), f.string());
        std::string name = grids.size() == 1 ? "transfer_grid.csv" : f.parent_path().filename().string() + "_transfer_grid.csv";
        util::atomic_write(dir / name, eval::transfer_grid_csv(grid));
    }
    bool incomplete = false;
    for (const auto& r : report.rows) incomplete = incomplete || r.incomplete;
    print_json({{"command", "report"}, {"out", dir.string()}, {"rows", report.rows.size()}, {"incomplete", incomplete}});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multilingual text-based EHR pipeline: synthetic data, ingestion, labels, alignment, training, reports."};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    std::uint64_t seed = 0;
    app.add_option("--jobs", g.jobs, "Worker threads for parallel maps")->check(CLI::PositiveNumber);
    auto* seed_opt = app.add_option("--seed", seed, "Overrides the seed of the stage's config");

    std::string synth_config, synth_out;
    auto* synth = app.add_subcommand("synth", "Generate synthetic sites and ground truth");
    synth->add_option("--config", synth_config, "Generator config JSON")->required();
    synth->add_option("--out", synth_out, "Output directory")->required();

    std::string ingest_manifest, ingest_out;
    auto* ingest = app.add_subcommand("ingest", "Ingest one site into the canonical store");
    ingest->add_option("--manifest", ingest_manifest, "Site manifest JSON")->required();
    ingest->add_option("--out", ingest_out, "Store directory")->required();

    std::string cohort_store, cohort_windows, cohort_cutoffs, cohort_out;
    auto* cohort = app.add_subcommand("cohort", "Apply cohort rules and derive task labels");
    cohort->add_option("--store", cohort_store, "Store file or directory")->required();
    cohort->add_option("--windows", cohort_windows, "Window config JSON");
    cohort->add_option("--cutoffs", cohort_cutoffs, "Cutoff table JSON (default: bundled)");
    cohort->add_option("--out", cohort_out, "Label directory")->required();

    std::string lin_store, lin_out;
    auto* linearize = app.add_subcommand("linearize", "Serialize window events as text");
    linearize->add_option("--store", lin_store, "Store file or directory")->required();
    linearize->add_option("--out", lin_out, "Corpus directory")->required();

    AlignArgs align_args;
    auto* align = app.add_subcommand("align", "Translate non-English words of a corpus into English");
    align->add_option("--corpus", align_args.corpus, "Corpus TSV")->required();
    align->add_option("--mode", align_args.mode, "none, dict or service")->check(CLI::IsMember({"none", "dict", "service"}));
    align->add_option("--dict", align_args.dict, "Dictionary TSV (default: bundled dictionaries)");
    align->add_option("--cache", align_args.cache, "Translation cache (JSON lines)");
    align->add_option("--language", align_args.language, "Site language: en, nl or de");
    align->add_option("--site", align_args.site, "Site id for statistics (default: corpus file stem)");
    align->add_option("--out", align_args.out, "Aligned corpus TSV");
    align->add_option("--langstats", align_args.langstats, "Language composition CSV");

    std::vector<std::string> tok_corpora;
    size_t tok_vocab = 8000;
    std::string tok_protected, tok_out;
    auto* tokenizer = app.add_subcommand("tokenizer", "Subword tokenizer");
    tokenizer->require_subcommand(1);
    auto* tok_train = tokenizer->add_subcommand("train", "Train a BPE vocabulary");
    tok_train->add_option("--corpus", tok_corpora, "Corpus TSV (repeatable)")->required();
    tok_train->add_option("--vocab-size", tok_vocab, "Target vocabulary size")->check(CLI::PositiveNumber);
    tok_train->add_option("--protected", tok_protected, "Protected tokens, one per line (default: digit-place tokens)");
    tok_train->add_option("--out", tok_out, "Vocabulary JSON")->required();

    std::string train_config;
    auto* train_cmd = app.add_subcommand("train", "Train single or multi regime models");
    train_cmd->add_option("--run-config", train_config, "Run config JSON")->required();

    std::string transfer_config;
    auto* transfer = app.add_subcommand("transfer", "Fine-tune single-regime checkpoints across sites");
    transfer->add_option("--run-config", transfer_config, "Run config JSON")->required();

    std::string report_logs, report_out;
    int report_seeds = 0;
    auto* report = app.add_subcommand("report", "Aggregate metrics into reports");
    report->add_option("--logs", report_logs, "Directory searched for metrics.csv files")->required();
    report->add_option("--out", report_out, "Report directory")->required();
    report->add_option("--expected-seeds", report_seeds, "Flag rows with fewer seeds");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    if (*seed_opt) g.seed = seed;

    try {
        if (*synth) return run_synth(synth_config, synth_out, g);
        if (*ingest) return run_ingest(ingest_manifest, ingest_out);
        if (*cohort) return run_cohort(cohort_store, cohort_windows, cohort_cutoffs, cohort_out);
        if (*linearize) return run_linearize(lin_store, lin_out);
        if (*align) return run_align(align_args, g);
        if (*tok_train) return run_tokenizer_train(tok_corpora, tok_vocab, tok_protected, tok_out);
        if (*train_cmd) return run_train(train_config, g);
        if (*transfer) return run_transfer(transfer_config, g);
        if (*report) return run_report(report_logs, report_out, report_seeds);
    } catch (const Error& e) {
        std::cerr << json{{"error", e.kind()}, {"detail", e.detail()}}.dump() << "\n";
        return 1;
    } catch (const json::exception& e) {
        std::cerr << json{{"error", "InvalidConfig"}, {"detail", e.what()}}.dump() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << json{{"error", "RuntimeError"}, {"detail", e.what()}}.dump() << "\n";
        return 1;
    }
    return 2;
}
