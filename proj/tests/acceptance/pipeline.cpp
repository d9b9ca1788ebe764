#include "pipeline.hpp"

#include <filesystem>

#include "harness.hpp"
#include "mlehr/core/ingest.hpp"
#include "mlehr/lingua/identify.hpp"
#include "mlehr/lingua/translate.hpp"
#include "mlehr/text/linearize.hpp"

namespace acceptance {

using namespace mlehr;

Pipeline build_pipeline(const synth::GeneratorConfig& config) {
    Scratch dir("pipeline");
    auto data = synth::generate(config);
    synth::write_generated(data, dir.path());
    Pipeline p;
    p.tasks = labels::make_tasks(labels::default_cutoffs());
    auto lexicon = lingua::BilingualDictionary::parse_tsv(synth::lexicon_tsv(data.truth, {Language::nl, Language::de}),
                                                          "lexicon");
    lingua::DictionaryStack dict({lexicon}, false);
    for (const auto& s : config.sites) {
        auto m = core::parse_manifest(std::filesystem::path(dir.path()) / s.site_id / "manifest.json");
        auto site = std::make_shared<core::SiteData>(core::ingest_site(m));
        train::SiteSource src;
        src.site_id = s.site_id;
        src.language = s.language;
        src.data = site;
        src.labels = labels::label_cohort(site->stays, site->manifest, p.tasks, labels::default_cutoffs(), {}).rows;
        src.corpus = text::linearize_site(*site);
        p.raw.push_back(src);
        if (s.language != Language::en) {
            lingua::Aligner aligner(lingua::LanguageIdentifier::bundled(), s.language, &dict);
            src.corpus = lingua::align_corpus(src.corpus, aligner, lingua::AlignMode::dict);
        }
        p.aligned.push_back(std::move(src));
    }
    return p;
}

std::shared_ptr<const tok::Tokenizer> train_tokenizer(const std::vector<train::SiteSource>& sites, size_t vocab_size) {
    std::vector<std::string> lines;
    for (const auto& s : sites)
        for (const auto& r : s.corpus) lines.push_back(r.text);
    return std::make_shared<tok::Tokenizer>(tok::Tokenizer::train(lines, vocab_size, text::protected_vocabulary()));
}

train::RunConfig small_run(std::vector<std::string> sites, int seeds) {
    train::RunConfig rc;
    rc.source_sites = std::move(sites);
    rc.seeds = seeds;
    rc.learning_rate = 1e-3;
    rc.max_steps = 3000;
    rc.eval_every = 200;
    rc.patience = 5;
    rc.model.d_model = 32;
    rc.model.n_layers_f = 1;
    rc.model.n_layers_g = 1;
    rc.model.n_heads = 2;
    return rc;
}

}  // namespace acceptance
