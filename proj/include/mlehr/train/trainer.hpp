#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mlehr/eval/report.hpp"
#include "mlehr/labels/labels.hpp"
#include "mlehr/nn/model.hpp"
#include "mlehr/train/dataset.hpp"

namespace mlehr::train {

enum class Regime { single, multi, transfer };
std::string to_string(Regime r);
Regime parse_regime(const std::string& text);

struct RunConfig {
    Regime regime = Regime::single;
    std::string mode = "dict";  // pipeline label carried into metrics
    std::vector<std::string> source_sites;
    std::string target_site;    // transfer: one target, or every source when empty
    double fewshot_fraction = 0.10;
    int seeds = 5;
    std::uint64_t seed_offset = 0;
    int batch_size = 32;
    double learning_rate = 1e-4;
    double dropout = 0.3;
    int max_steps = 3000;
    int eval_every = 200;
    int patience = 5;
    bool site_balanced = false;
    double clip_norm = 1.0;
    nn::ModelConfig model;  // architecture; vocabulary sizes and heads are filled per run

    void validate() const;
    std::vector<std::uint64_t> seed_values() const;
    std::string to_json() const;
    // Unknown keys are ignored so a run config can carry data paths. Not
    // validated: source sites may be filled in later.
    static RunConfig from_json(const std::string& text);
};

struct SplitSite {
    std::string site_id;
    std::vector<const Example*> train, valid, test;
};

// Patient-level 8:1:1 split seeded by derive_seed(seed, "split").
SplitSite split_site(const EncodedSite& site, std::uint64_t seed);
// round(fraction * patients) training patients (at least one), chosen by seed.
std::vector<const Example*> fewshot_subset(const std::vector<const Example*>& train, double fraction, std::uint64_t seed,
                                           const std::string& site_id);

// Training-split stays of a source for one seed: what its featurizer is fit on.
FitStays training_stays(const SiteSource& source, std::uint64_t seed);

nn::BatchInput make_batch(const std::vector<const Example*>& stays, const EventTable& table);

struct TaskScores {
    std::vector<std::optional<double>> auroc;  // per task
    std::optional<double> mean;
};

TaskScores evaluate(nn::Model<float>& model, const EventTable& table, const std::vector<const Example*>& stays);

struct FitOptions {
    std::string run_name = "run";
    int batch_size = 32;
    double learning_rate = 1e-4;
    double clip_norm = 1.0;
    int max_steps = 3000;
    int eval_every = 200;
    int patience = 5;
    bool site_balanced = false;
};

struct SiteBest {
    int step = 0;
    std::optional<double> val_auroc;
    std::vector<nn::Mat<float>> state;
};

struct FitResult {
    std::map<std::string, SiteBest> best;  // per validation site
    std::vector<std::string> log;          // JSON lines
    int steps = 0;
    bool diverged = false;
};

// Trains on the union of train lists, validates each site of `validate_on`
// every eval_every steps (and before the first step), keeps one best state
// per site, and stops once every site has gone `patience` evaluations without
// improvement. A non-finite loss or gradient stops training with the best
// states found so far.
FitResult fit(nn::Model<float>& model, const EventTable& table, const std::vector<SplitSite>& train_on,
              const std::vector<SplitSite>& validate_on, const FitOptions& options, std::uint64_t seed);

using FeaturizerFactory =
    std::function<std::unique_ptr<Featurizer>(const std::vector<const SiteSource*>& sites, const FitStays& fit)>;

FeaturizerFactory text_factory(std::shared_ptr<const tok::Tokenizer> tokenizer);
FeaturizerFactory code_factory(int bins = 10);
FeaturizerFactory common_factory(std::vector<std::string> variables = {}, int hours = 12);

struct SavedModel {
    nn::Checkpoint checkpoint;
    int step = 0;
    std::optional<double> val_auroc;
};

struct RunOutput {
    std::vector<eval::MetricRow> metrics;  // test AUROC per task
    std::vector<std::string> log;
    std::map<std::pair<std::string, std::uint64_t>, SavedModel> models;  // (site, seed)
    std::map<std::pair<std::string, std::uint64_t>, std::optional<double>> val_means;
};

// Single: one model per source site. Multi: one model on the union with a
// best state per site. Test metrics always come from the state selected on
// the same site's validation split.
RunOutput train_regime(const RunConfig& config, const std::vector<SiteSource>& sources,
                       const std::vector<labels::TaskSpec>& tasks, const FeaturizerFactory& factory, int jobs = 1);

// Fine-tunes `start` on `fraction` of the target's training patients with
// early stopping on the target's validation split.
struct FinetuneResult {
    SavedModel model;
    TaskScores test;
    std::vector<std::string> log;
};
FinetuneResult finetune(const nn::Checkpoint& start, const RunConfig& config, const SiteSource& target,
                        const Featurizer& featurizer, double fraction, std::uint64_t seed, const std::string& run_name);

struct TransferOutput {
    eval::TransferGrid grid;           // (source, target) -> mean over seeds of test task mean
    eval::TransferGrid scratch;        // (target, target) -> same-fraction training from scratch
    std::vector<eval::MetricRow> metrics;
    std::vector<std::string> log;
};

// Off-diagonal cells fine-tune each source's single checkpoint on the target;
// the diagonal copies the single-regime result. Throws MissingCheckpoint.
TransferOutput transfer_matrix(const RunConfig& config, const std::vector<SiteSource>& sources,
                               const std::vector<labels::TaskSpec>& tasks, const FeaturizerFactory& factory,
                               const RunOutput& single, int jobs = 1);

// Mean over seeds of the test task mean for one (site, regime, mode).
std::optional<double> mean_test_auroc(const std::vector<eval::MetricRow>& rows, const std::string& site,
                                      const std::string& regime);

}  // namespace mlehr::train
