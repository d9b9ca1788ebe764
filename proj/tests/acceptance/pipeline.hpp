#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mlehr/labels/labels.hpp"
#include "mlehr/synth/generator.hpp"
#include "mlehr/tok/bpe.hpp"
#include "mlehr/train/trainer.hpp"

namespace acceptance {

// Synthetic sites carried through ingest, cohort, linearization and,
// for nl/de sites, dictionary alignment with the generator's lexicon.
struct Pipeline {
    std::vector<mlehr::labels::TaskSpec> tasks;
    std::vector<mlehr::train::SiteSource> raw;      // unaligned text
    std::vector<mlehr::train::SiteSource> aligned;  // nl/de words translated
};

Pipeline build_pipeline(const mlehr::synth::GeneratorConfig& config);

std::shared_ptr<const mlehr::tok::Tokenizer> train_tokenizer(const std::vector<mlehr::train::SiteSource>& sites,
                                                             size_t vocab_size);

// Small text model used for every training criterion.
mlehr::train::RunConfig small_run(std::vector<std::string> sites, int seeds);

}  // namespace acceptance
