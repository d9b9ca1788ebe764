#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "mlehr/core/ingest.hpp"
#include "mlehr/labels/labels.hpp"
#include "mlehr/nn/model.hpp"
#include "mlehr/text/linearize.hpp"
#include "mlehr/tok/bpe.hpp"

namespace mlehr::train {

// Everything an encoder may read for one site.
struct SiteSource {
    std::string site_id;
    Language language = Language::en;
    std::vector<labels::LabeledStay> labels;      // cohort stays
    std::vector<text::CorpusRecord> corpus;       // window records for the text encoder
    std::shared_ptr<const core::SiteData> data;   // raw events for the baselines
};

// Interned event payloads shared by every stay of a run.
class EventTable {
   public:
    int intern(std::vector<std::int32_t> tokens);
    int add_features(std::vector<float> row);
    const std::vector<std::int32_t>& tokens(int id) const { return tokens_.at(static_cast<size_t>(id)); }
    const std::vector<float>& features(int id) const { return features_.at(static_cast<size_t>(id)); }
    size_t size() const { return tokens_.empty() ? features_.size() : tokens_.size(); }
    bool has_features() const { return !features_.empty(); }

   private:
    struct Hash {
        size_t operator()(const std::vector<std::int32_t>& v) const;
    };
    std::vector<std::vector<std::int32_t>> tokens_;
    std::vector<std::vector<float>> features_;
    std::unordered_map<std::vector<std::int32_t>, int, Hash> index_;
};

struct Example {
    std::string patient_id;
    std::string stay_id;
    std::vector<int> events;  // EventTable ids, time order
    std::vector<double> minutes;
    labels::LabelVector labels;
};

struct EncodeCounters {
    std::uint64_t truncated_tokens = 0;
    std::uint64_t truncated_events = 0;
    std::uint64_t stays_without_events = 0;
};

struct EncodedSite {
    std::string site_id;
    std::vector<Example> stays;
    EncodeCounters counters;
};

struct EncodeLimits {
    int max_tokens_per_event = 64;
    int max_events_per_stay = 256;
    double window_end_minutes = 720.0;
};

class Featurizer {
   public:
    virtual ~Featurizer() = default;
    virtual nn::EncoderKind kind() const = 0;
    // Fills the vocabulary / input sizes of a model config.
    virtual void configure(nn::ModelConfig& config) const = 0;
    virtual EncodedSite encode(const SiteSource& site, EventTable& table, const EncodeLimits& limits) const = 0;
    virtual std::string metadata_json() const = 0;
};

// Training stays (by site) a baseline may fit its vocabulary or statistics on.
using FitStays = std::map<std::string, std::set<std::string>>;

std::unique_ptr<Featurizer> make_text_featurizer(std::shared_ptr<const tok::Tokenizer> tokenizer);

// Code key: event type, text features, and the code columns named by the
// manifest's variable maps. Remaining numeric features are value slots,
// binned at training-value quantiles. Unseen codes and slots map to row 0.
std::unique_ptr<Featurizer> fit_code_featurizer(const std::vector<const SiteSource*>& sites, const FitStays& fit,
                                                int bins, const EncodeLimits& limits = {});

// Bin index of v against quantile edges: the number of edges strictly below v.
int quantile_bin(const std::vector<double>& edges, double v);
// B - 1 interior quantile edges of a sample.
std::vector<double> quantile_edges(std::vector<double> values, int bins);

struct CommonGrid {
    int hours = 12;
    std::vector<std::string> variables;
    // hours x variables; NaN where nothing was measured in that hour.
    std::vector<std::vector<double>> values;
};

// Last measurement per hour of the observation window; unmapped variables stay
// empty.
CommonGrid common_grid(const ICUStay& stay, const core::SiteManifest& manifest, const std::vector<std::string>& variables,
                       int hours = 12);

// Rows are [standardised forward-filled values, missing indicators]; one row
// per hour at minute 60h + 30.
std::unique_ptr<Featurizer> fit_common_featurizer(const std::vector<const SiteSource*>& sites, const FitStays& fit,
                                                  std::vector<std::string> variables = {}, int hours = 12);

}  // namespace mlehr::train
