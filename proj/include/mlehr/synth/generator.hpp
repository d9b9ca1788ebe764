#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mlehr/core/manifest.hpp"
#include "mlehr/core/types.hpp"

namespace mlehr::synth {

struct SiteConfig {
    std::string site_id;
    Language language = Language::en;
    int n_stays = 100;
    int schema_variant = 0;  // 0 chart/lab/input/output, 1 numeric/list/drug, 2 observation/pharma
    std::uint64_t vocabulary_seed = 1;
    // Sites sharing a seed share every sampled quantity; by default the site id.
    std::string seed;
    // Share of clinical terms written in English at a non-English site.
    double english_fraction = 0.2;
};

struct GeneratorConfig {
    std::vector<SiteConfig> sites;
    int latent_dims = 4;
    double signal_strength = 0.9;
    std::uint64_t noise_seed = 0;
    double mortality_14_target = 0.11;
    double los_7_target = 0.20;
    double invalid_timestamp_rate = 0.002;
    double minor_rate = 0.03;
    double short_stay_rate = 0.03;
    double gap_death_rate = 0.01;
    double readmission_rate = 0.10;
    double dialysis_rate = 0.03;

    void validate() const;
};

GeneratorConfig parse_generator_config(const std::string& json_text);

// One clinical term in its three renderings (lower case).
struct Term {
    std::string en, nl, de;
    const std::string& in(Language lang) const;
};

const std::vector<Term>& clinical_terms();

struct SiteTruth {
    std::string site_id;
    Language language = Language::en;
    int schema_variant = 0;
    size_t n_stays = 0;
    size_t event_rows = 0;          // rows with a valid timestamp
    size_t invalid_timestamp_rows = 0;
    std::map<std::string, size_t> rows_per_table;
    std::map<std::string, size_t> exclusions;  // age, short_stay, death_in_gap
    std::map<std::string, std::vector<double>> latent;  // stay_id -> z
    std::vector<std::string> english_terms;              // terms left in English
};

struct GroundTruth {
    // language -> (term -> English term); a bijection per language.
    std::map<Language, std::map<std::string, std::string>> lexicon;
    std::vector<SiteTruth> sites;
    double mortality_intercept = 0.0;
    double los_log_median = 0.0;
};

struct GeneratedSite {
    SiteConfig config;
    core::SiteManifest manifest;                // relative file paths
    std::map<std::string, std::string> files;   // file name -> CSV text
};

struct GeneratedData {
    std::vector<GeneratedSite> sites;
    GroundTruth truth;
};

// Pure function of the config; identical configs give byte-identical files.
GeneratedData generate(const GeneratorConfig& config);

std::string ground_truth_json(const GroundTruth& truth);
// Three-column dictionary (language, term, English) for the given languages.
std::string lexicon_tsv(const GroundTruth& truth, const std::vector<Language>& languages);

// Writes <out>/<site_id>/{manifest.json,*.csv}, <out>/ground_truth.json and
// <out>/lexicon.tsv.
void write_generated(const GeneratedData& data, const std::filesystem::path& out_dir);

}  // namespace mlehr::synth
