#include "mlehr/train/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <set>
#include <thread>

#include "json.hpp"
#include "mlehr/core/split.hpp"
#include "mlehr/error.hpp"
#include "mlehr/eval/metrics.hpp"
#include "mlehr/util/hash.hpp"
#include "mlehr/util/rng.hpp"
#include "mlehr/util/strings.hpp"

namespace mlehr::train {

using nlohmann::json;

std::string to_string(Regime r) {
    switch (r) {
        case Regime::single:
            return "single";
        case Regime::multi:
            return "multi";
        case Regime::transfer:
            return "transfer";
    }
    return "single";
}

Regime parse_regime(const std::string& text) {
    if (text == "single") return Regime::single;
    if (text == "multi") return Regime::multi;
    if (text == "transfer") return Regime::transfer;
    fail("InvalidConfig", "unknown regime '" + text + "'");
}

void RunConfig::validate() const {
    if (source_sites.empty()) fail("InvalidConfig", "no source sites");
    std::set<std::string> seen(source_sites.begin(), source_sites.end());
    if (seen.size() != source_sites.size()) fail("InvalidConfig", "duplicate source site");
    if (!(fewshot_fraction > 0.0 && fewshot_fraction <= 1.0)) fail("InvalidConfig", "fewshot_fraction must be in (0, 1]");
    if (seeds < 1) fail("InvalidConfig", "seeds must be at least 1");
    if (batch_size < 1 || max_steps < 1 || eval_every < 1 || patience < 1)
        fail("InvalidConfig", "batch_size, max_steps, eval_every and patience must be positive");
    if (!(learning_rate > 0.0)) fail("InvalidConfig", "learning_rate must be positive");
    if (dropout < 0.0 || dropout >= 1.0) fail("InvalidConfig", "dropout must be in [0, 1)");
    if (regime == Regime::transfer && !target_site.empty() && !seen.count(target_site))
        fail("InvalidConfig", "target_site must be one of the source sites");
}

std::vector<std::uint64_t> RunConfig::seed_values() const {
    std::vector<std::uint64_t> out;
    for (int i = 0; i < seeds; ++i) out.push_back(seed_offset + static_cast<std::uint64_t>(i));
    return out;
}

std::string RunConfig::to_json() const {
    json j = {{"regime", to_string(regime)},
              {"mode", mode},
              {"source_sites", source_sites},
              {"target_site", target_site},
              {"fewshot_fraction", fewshot_fraction},
              {"seeds", seeds},
              {"seed_offset", seed_offset},
              {"batch_size", batch_size},
              {"learning_rate", learning_rate},
              {"dropout", dropout},
              {"max_steps", max_steps},
              {"eval_every", eval_every},
              {"patience", patience},
              {"site_balanced", site_balanced},
              {"clip_norm", clip_norm},
              {"model",
               {{"encoder", nn::to_string(model.kind)},
                {"d_model", model.d_model},
                {"n_layers_f", model.n_layers_f},
                {"n_layers_g", model.n_layers_g},
                {"n_heads", model.n_heads},
                {"ffn_mult", model.ffn_mult},
                {"max_tokens_per_event", model.max_tokens_per_event},
                {"max_events_per_stay", model.max_events_per_stay}}}};
    return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
    RunConfig c;
    try {
        json j = json::parse(text);
        c.regime = parse_regime(j.value("regime", std::string("single")));
        c.mode = j.value("mode", c.mode);
        c.source_sites = j.value("source_sites", std::vector<std::string>{});
        c.target_site = j.value("target_site", std::string());
        c.fewshot_fraction = j.value("fewshot_fraction", c.fewshot_fraction);
        c.seeds = j.value("seeds", c.seeds);
        c.seed_offset = j.value("seed_offset", c.seed_offset);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.dropout = j.value("dropout", c.dropout);
        c.max_steps = j.value("max_steps", c.max_steps);
        c.eval_every = j.value("eval_every", c.eval_every);
        c.patience = j.value("patience", c.patience);
        c.site_balanced = j.value("site_balanced", c.site_balanced);
        c.clip_norm = j.value("clip_norm", c.clip_norm);
        if (j.contains("model")) {
            const auto& m = j.at("model");
            c.model.kind = nn::parse_encoder_kind(m.value("encoder", std::string("text")));
            c.model.d_model = m.value("d_model", c.model.d_model);
            c.model.n_layers_f = m.value("n_layers_f", c.model.n_layers_f);
            c.model.n_layers_g = m.value("n_layers_g", c.model.n_layers_g);
            c.model.n_heads = m.value("n_heads", c.model.n_heads);
            c.model.ffn_mult = m.value("ffn_mult", c.model.ffn_mult);
            c.model.max_tokens_per_event = m.value("max_tokens_per_event", c.model.max_tokens_per_event);
            c.model.max_events_per_stay = m.value("max_events_per_stay", c.model.max_events_per_stay);
        }
    } catch (const json::exception& e) {
        fail("InvalidConfig", std::string("run config: ") + e.what());
    }
    return c;
}

namespace {

std::vector<std::string> patients_of(const std::vector<labels::LabeledStay>& stays) {
    std::set<std::string> ids;
    for (const auto& s : stays) ids.insert(s.patient_id);
    return {ids.begin(), ids.end()};
}

core::DatasetSplit split_source(const SiteSource& s, std::uint64_t seed) {
    return core::split_patients(patients_of(s.labels), util::derive_seed(seed, "split"));
}

SplitSite apply_split(const EncodedSite& site, const core::DatasetSplit& split) {
    std::set<std::string> tr(split.train.begin(), split.train.end()), va(split.valid.begin(), split.valid.end());
    SplitSite out;
    out.site_id = site.site_id;
    for (const auto& ex : site.stays) {
        if (tr.count(ex.patient_id)) out.train.push_back(&ex);
        else if (va.count(ex.patient_id)) out.valid.push_back(&ex);
        else out.test.push_back(&ex);
    }
    return out;
}

std::set<std::string> stays_of(const SiteSource& s, const std::vector<std::string>& patients) {
    std::set<std::string> p(patients.begin(), patients.end()), out;
    for (const auto& ls : s.labels)
        if (p.count(ls.patient_id)) out.insert(ls.stay_id);
    return out;
}

json opt_json(std::optional<double> v) { return v ? json(*v) : json(nullptr); }

bool better(std::optional<double> candidate, std::optional<double> best) {
    if (!candidate) return false;
    if (!best) return true;
    return *candidate > *best;
}

}  // namespace

SplitSite split_site(const EncodedSite& site, std::uint64_t seed) {
    std::set<std::string> ids;
    for (const auto& ex : site.stays) ids.insert(ex.patient_id);
    return apply_split(site, core::split_patients({ids.begin(), ids.end()}, util::derive_seed(seed, "split")));
}

std::vector<const Example*> fewshot_subset(const std::vector<const Example*>& train, double fraction, std::uint64_t seed,
                                           const std::string& site_id) {
    if (!(fraction > 0.0 && fraction <= 1.0)) fail("InvalidConfig", "fraction must be in (0, 1]");
    std::vector<std::string> patients;
    {
        std::set<std::string> ids;
        for (const auto* ex : train) ids.insert(ex->patient_id);
        patients.assign(ids.begin(), ids.end());
    }
    if (patients.empty()) return {};
    util::Rng rng(util::derive_seed(seed, "fewshot:" + site_id));
    rng.shuffle(patients);
    size_t keep = std::max<size_t>(1, static_cast<size_t>(std::llround(fraction * static_cast<double>(patients.size()))));
    std::set<std::string> chosen(patients.begin(), patients.begin() + static_cast<std::ptrdiff_t>(keep));
    std::vector<const Example*> out;
    for (const auto* ex : train)
        if (chosen.count(ex->patient_id)) out.push_back(ex);
    return out;
}

nn::BatchInput make_batch(const std::vector<const Example*>& stays, const EventTable& table) {
    std::vector<int> ids;
    for (const auto* ex : stays) ids.insert(ids.end(), ex->events.begin(), ex->events.end());
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    nn::BatchInput in;
    for (int id : ids) {
        if (table.has_features()) in.features.push_back(&table.features(id));
        else in.tokens.push_back(&table.tokens(id));
    }
    for (const auto* ex : stays) {
        nn::Segment s{static_cast<int>(in.events.size()), static_cast<int>(ex->events.size())};
        for (size_t i = 0; i < ex->events.size(); ++i) {
            in.events.push_back(static_cast<int>(std::lower_bound(ids.begin(), ids.end(), ex->events[i]) - ids.begin()));
            in.minutes.push_back(ex->minutes[i]);
        }
        in.stays.push_back(s);
        in.labels.push_back(ex->labels);
    }
    return in;
}

TaskScores evaluate(nn::Model<float>& model, const EventTable& table, const std::vector<const Example*>& stays) {
    const auto& heads = model.heads();
    const Eigen::Index width = heads.empty() ? 0 : heads.back().offset + heads.back().classes;
    nn::Mat<double> probs(static_cast<Eigen::Index>(stays.size()), width);
    constexpr size_t kChunk = 256;
    for (size_t start = 0; start < stays.size(); start += kChunk) {
        std::vector<const Example*> part(stays.begin() + static_cast<std::ptrdiff_t>(start),
                                         stays.begin() + static_cast<std::ptrdiff_t>(std::min(stays.size(), start + kChunk)));
        auto in = make_batch(part, table);
        nn::Graph<float> g(false);
        auto p = nn::head_softmax(g.value(model.forward(g, in)), heads);
        probs.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(part.size())) = p.cast<double>();
    }
    TaskScores out;
    double sum = 0.0;
    int n = 0;
    for (size_t k = 0; k < heads.size(); ++k) {
        std::vector<int> y;
        std::vector<size_t> rows;
        for (size_t i = 0; i < stays.size(); ++i) {
            int label = stays[i]->labels.at(k);
            if (label < 0) continue;
            y.push_back(label);
            rows.push_back(i);
        }
        std::optional<double> a;
        if (heads[k].classes == 2) {
            std::vector<double> s;
            for (size_t r : rows) s.push_back(probs(static_cast<Eigen::Index>(r), heads[k].offset + 1));
            a = eval::auroc(s, y);
        } else {
            std::vector<std::vector<double>> s;
            for (size_t r : rows) {
                std::vector<double> row(static_cast<size_t>(heads[k].classes));
                for (int c = 0; c < heads[k].classes; ++c) row[static_cast<size_t>(c)] = probs(static_cast<Eigen::Index>(r), heads[k].offset + c);
                s.push_back(std::move(row));
            }
            a = eval::auroc_ovr(s, y);
        }
        out.auroc.push_back(a);
        if (a) {
            sum += *a;
            ++n;
        }
    }
    if (n) out.mean = sum / n;
    return out;
}

FitResult fit(nn::Model<float>& model, const EventTable& table, const std::vector<SplitSite>& train_on,
              const std::vector<SplitSite>& validate_on, const FitOptions& options, std::uint64_t seed) {
    FitResult result;
    std::vector<std::vector<const Example*>> pools;
    size_t total = 0;
    for (const auto& s : train_on) {
        pools.push_back(s.train);
        total += s.train.size();
    }
    if (total == 0) fail("EmptyInput", options.run_name + ": no training stays");
    util::Rng order_rng(util::derive_seed(seed, "shuffle:" + options.run_name));
    util::Rng dropout_rng(util::derive_seed(seed, "dropout:" + options.run_name));
    std::vector<const Example*> pooled;
    for (const auto& p : pools) pooled.insert(pooled.end(), p.begin(), p.end());
    size_t cursor = pooled.size();
    std::vector<size_t> site_cursor(pools.size());
    for (size_t i = 0; i < pools.size(); ++i) site_cursor[i] = pools[i].size();
    auto next_uniform = [&]() {
        if (cursor == pooled.size()) {
            order_rng.shuffle(pooled);
            cursor = 0;
        }
        return pooled[cursor++];
    };
    auto next_balanced = [&]() {
        size_t s;
        do {
            s = static_cast<size_t>(order_rng.below(pools.size()));
        } while (pools[s].empty());
        if (site_cursor[s] == pools[s].size()) {
            order_rng.shuffle(pools[s]);
            site_cursor[s] = 0;
        }
        return pools[s][site_cursor[s]++];
    };

    std::map<std::string, int> stale;
    auto evaluate_all = [&](int step, double mean_loss) {
        json val = json::object();
        bool all_stale = true;
        for (const auto& s : validate_on) {
            auto score = evaluate(model, table, s.valid);
            val[s.site_id] = opt_json(score.mean);
            auto& best = result.best[s.site_id];
            if (step == 0 || better(score.mean, best.val_auroc)) {
                best.step = step;
                best.val_auroc = score.mean;
                best.state = model.state();
                stale[s.site_id] = 0;
                if (step > 0)
                    result.log.push_back(json{{"run", options.run_name}, {"seed", seed}, {"event", "best"}, {"site", s.site_id},
                                              {"step", step}, {"val_auroc", opt_json(score.mean)}}
                                             .dump());
            } else {
                ++stale[s.site_id];
            }
            if (stale[s.site_id] < options.patience) all_stale = false;
        }
        result.log.push_back(json{{"run", options.run_name}, {"seed", seed}, {"event", "eval"}, {"step", step},
                                  {"loss", step ? json(mean_loss) : json(nullptr)}, {"val", val}}
                                 .dump());
        return all_stale;
    };

    evaluate_all(0, 0.0);
    nn::Adam adam(nn::AdamOptions{options.learning_rate, 0.9, 0.999, 1e-8, options.clip_norm});
    const size_t batch = std::min<size_t>(static_cast<size_t>(options.batch_size), total);
    double loss_sum = 0.0;
    int loss_n = 0;
    std::vector<const Example*> stays(batch);
    for (int step = 1; step <= options.max_steps; ++step) {
        for (auto& s : stays) s = options.site_balanced ? next_balanced() : next_uniform();
        auto in = make_batch(stays, table);
        nn::Graph<float> g(true, &dropout_rng);
        model.zero_grad();
        nn::Var loss = g.multitask_loss(model.forward(g, in), model.heads(), in.labels);
        const double lv = g.value(loss)(0, 0);
        bool ok = std::isfinite(lv);
        if (ok) {
            g.backward(loss);
            try {
                adam.step(model);
            } catch (const Error& e) {
                if (e.kind() != "Diverged") throw;
                ok = false;
            }
        }
        if (!ok) {
            result.diverged = true;
            result.steps = step;
            result.log.push_back(
                json{{"run", options.run_name}, {"seed", seed}, {"event", "diverged"}, {"step", step}}.dump());
            return result;
        }
        loss_sum += lv;
        ++loss_n;
        result.steps = step;
        if (step % options.eval_every == 0 || step == options.max_steps) {
            bool stop = evaluate_all(step, loss_sum / loss_n);
            loss_sum = 0.0;
            loss_n = 0;
            if (stop) {
                result.log.push_back(
                    json{{"run", options.run_name}, {"seed", seed}, {"event", "early_stop"}, {"step", step}}.dump());
                break;
            }
        }
    }
    return result;
}

FeaturizerFactory text_factory(std::shared_ptr<const tok::Tokenizer> tokenizer) {
    return [tokenizer](const std::vector<const SiteSource*>&, const FitStays&) { return make_text_featurizer(tokenizer); };
}

FeaturizerFactory code_factory(int bins) {
    return [bins](const std::vector<const SiteSource*>& sites, const FitStays& fit) {
        return fit_code_featurizer(sites, fit, bins);
    };
}

FeaturizerFactory common_factory(std::vector<std::string> variables, int hours) {
    return [variables, hours](const std::vector<const SiteSource*>& sites, const FitStays& fit) {
        return fit_common_featurizer(sites, fit, variables, hours);
    };
}

namespace {

const SiteSource& find_source(const std::vector<SiteSource>& sources, const std::string& id) {
    for (const auto& s : sources)
        if (s.site_id == id) return s;
    fail("UnknownSite", id);
}

EncodeLimits limits_of(const RunConfig& c) {
    EncodeLimits l;
    l.max_tokens_per_event = c.model.max_tokens_per_event;
    l.max_events_per_stay = c.model.max_events_per_stay;
    return l;
}

nn::ModelConfig model_config(const RunConfig& c, const Featurizer& f, const std::vector<labels::TaskSpec>& tasks) {
    nn::ModelConfig m = c.model;
    f.configure(m);
    m.dropout = c.dropout;
    m.head_classes.clear();
    for (const auto& t : tasks) m.head_classes.push_back(t.n_classes);
    m.validate();
    return m;
}

FitOptions fit_options(const RunConfig& c, std::string name) {
    FitOptions o;
    o.run_name = std::move(name);
    o.batch_size = c.batch_size;
    o.learning_rate = c.learning_rate;
    o.clip_norm = c.clip_norm;
    o.max_steps = c.max_steps;
    o.eval_every = c.eval_every;
    o.patience = c.patience;
    o.site_balanced = c.site_balanced;
    return o;
}

std::string counters_json(const EncodedSite& e) {
    return json{{"event", "encode"},
                {"site", e.site_id},
                {"stays", e.stays.size()},
                {"truncated_tokens", e.counters.truncated_tokens},
                {"truncated_events", e.counters.truncated_events},
                {"stays_without_events", e.counters.stays_without_events}}
        .dump();
}

struct SeedResult {
    std::vector<eval::MetricRow> metrics;
    std::vector<std::string> log;
    std::map<std::pair<std::string, std::uint64_t>, SavedModel> models;
    std::map<std::pair<std::string, std::uint64_t>, std::optional<double>> val_means;
};

// Loads the selected state, scores the test split and records everything.
void finish_site(SeedResult& out, nn::Model<float>& model, const EventTable& table, const SplitSite& split,
                 const SiteBest& best, const RunConfig& config, const std::string& regime, const Featurizer& f,
                 const std::vector<labels::TaskSpec>& tasks, std::uint64_t seed, const std::string& run_name) {
    model.load_state(best.state);
    auto test = evaluate(model, table, split.test);
    for (size_t k = 0; k < tasks.size(); ++k)
        out.metrics.push_back(eval::MetricRow{split.site_id, regime, config.mode, tasks[k].task_id, seed, test.auroc[k]});
    out.log.push_back(json{{"run", run_name},
                           {"seed", seed},
                           {"event", "test"},
                           {"site", split.site_id},
                           {"selected_on", "valid:" + split.site_id},
                           {"checkpoint_step", best.step},
                           {"val_auroc", opt_json(best.val_auroc)},
                           {"test_task_mean", opt_json(test.mean)}}
                          .dump());
    json meta = {{"site", split.site_id}, {"seed", seed},         {"regime", regime},
                 {"mode", config.mode},   {"step", best.step},    {"val_auroc", opt_json(best.val_auroc)},
                 {"featurizer", json::parse(f.metadata_json())}};
    out.models[{split.site_id, seed}] = SavedModel{nn::make_checkpoint(model, meta.dump()), best.step, best.val_auroc};
    out.val_means[{split.site_id, seed}] = best.val_auroc;
}

SeedResult run_seed(const RunConfig& config, const std::vector<SiteSource>& sources, const std::vector<labels::TaskSpec>& tasks,
                    const FeaturizerFactory& factory, std::uint64_t seed) {
    SeedResult out;
    std::map<std::string, core::DatasetSplit> splits;
    for (const auto& id : config.source_sites) splits[id] = split_source(find_source(sources, id), seed);
    auto train_stays = [&](const std::vector<std::string>& ids) {
        FitStays fit;
        for (const auto& id : ids) fit[id] = stays_of(find_source(sources, id), splits[id].train);
        return fit;
    };
    const auto limits = limits_of(config);
    const std::string regime = to_string(config.regime);
    if (config.regime == Regime::single) {
        for (const auto& id : config.source_sites) {
            const auto& src = find_source(sources, id);
            auto f = factory({&src}, train_stays({id}));
            EventTable table;
            auto enc = f->encode(src, table, limits);
            out.log.push_back(counters_json(enc));
            auto split = apply_split(enc, splits[id]);
            nn::Model<float> model(model_config(config, *f, tasks), util::derive_seed(seed, "init"));
            const std::string name = "single:" + id;
            auto r = fit(model, table, {split}, {split}, fit_options(config, name), seed);
            out.log.insert(out.log.end(), r.log.begin(), r.log.end());
            finish_site(out, model, table, split, r.best.at(id), config, regime, *f, tasks, seed, name);
        }
    } else {
        std::vector<const SiteSource*> srcs;
        for (const auto& id : config.source_sites) srcs.push_back(&find_source(sources, id));
        auto f = factory(srcs, train_stays(config.source_sites));
        EventTable table;
        std::vector<EncodedSite> encoded;
        for (const auto* s : srcs) {
            encoded.push_back(f->encode(*s, table, limits));
            out.log.push_back(counters_json(encoded.back()));
        }
        std::vector<SplitSite> split;
        for (const auto& e : encoded) split.push_back(apply_split(e, splits[e.site_id]));
        nn::Model<float> model(model_config(config, *f, tasks), util::derive_seed(seed, "init"));
        const std::string name = "multi";
        auto r = fit(model, table, split, split, fit_options(config, name), seed);
        out.log.insert(out.log.end(), r.log.begin(), r.log.end());
        for (const auto& s : split) finish_site(out, model, table, s, r.best.at(s.site_id), config, regime, *f, tasks, seed, name);
    }
    return out;
}

// Runs fn(i) for i < n on up to `jobs` threads; results land by index.
template <class R, class Fn>
std::vector<R> parallel_map(size_t n, int jobs, Fn fn) {
    std::vector<R> results(n);
    std::vector<std::exception_ptr> errors(n);
    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (size_t i = next++; i < n; i = next++) {
            try {
                results[i] = fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    size_t threads = std::min<size_t>(n, static_cast<size_t>(std::max(1, jobs)));
    std::vector<std::thread> pool;
    for (size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return results;
}

}  // namespace

FitStays training_stays(const SiteSource& source, std::uint64_t seed) {
    return FitStays{{source.site_id, stays_of(source, split_source(source, seed).train)}};
}

RunOutput train_regime(const RunConfig& config, const std::vector<SiteSource>& sources,
                       const std::vector<labels::TaskSpec>& tasks, const FeaturizerFactory& factory, int jobs) {
    config.validate();
    if (config.regime == Regime::transfer) fail("InvalidConfig", "use transfer_matrix for the transfer regime");
    auto seeds = config.seed_values();
    auto results = parallel_map<SeedResult>(seeds.size(), jobs,
                                            [&](size_t i) { return run_seed(config, sources, tasks, factory, seeds[i]); });
    RunOutput out;
    for (auto& r : results) {
        out.metrics.insert(out.metrics.end(), r.metrics.begin(), r.metrics.end());
        out.log.insert(out.log.end(), r.log.begin(), r.log.end());
        for (auto& [k, v] : r.models) out.models.emplace(k, std::move(v));
        for (auto& [k, v] : r.val_means) out.val_means.emplace(k, v);
    }
    return out;
}

FinetuneResult finetune(const nn::Checkpoint& start, const RunConfig& config, const SiteSource& target,
                        const Featurizer& featurizer, double fraction, std::uint64_t seed, const std::string& run_name) {
    FinetuneResult out;
    EventTable table;
    auto enc = featurizer.encode(target, table, limits_of(config));
    out.log.push_back(counters_json(enc));
    auto split = apply_split(enc, split_source(target, seed));
    split.train = fewshot_subset(split.train, fraction, seed, target.site_id);
    nn::Model<float> model(start.config, util::derive_seed(seed, "init"));
    nn::apply_checkpoint(model, start);
    auto r = fit(model, table, {split}, {split}, fit_options(config, run_name), seed);
    out.log.insert(out.log.end(), r.log.begin(), r.log.end());
    const auto& best = r.best.at(target.site_id);
    model.load_state(best.state);
    out.test = evaluate(model, table, split.test);
    out.model = SavedModel{nn::make_checkpoint(model, start.metadata), best.step, best.val_auroc};
    return out;
}

std::optional<double> mean_test_auroc(const std::vector<eval::MetricRow>& rows, const std::string& site,
                                      const std::string& regime) {
    std::map<std::uint64_t, std::vector<eval::MetricRow>> by_seed;
    for (const auto& r : rows)
        if (r.site == site && r.regime == regime) by_seed[r.seed].push_back(r);
    double sum = 0.0;
    int n = 0;
    for (const auto& [seed, list] : by_seed)
        if (auto m = eval::task_mean(list)) {
            sum += *m;
            ++n;
        }
    if (!n) return std::nullopt;
    return sum / n;
}

TransferOutput transfer_matrix(const RunConfig& config, const std::vector<SiteSource>& sources,
                               const std::vector<labels::TaskSpec>& tasks, const FeaturizerFactory& factory,
                               const RunOutput& single, int jobs) {
    config.validate();
    const auto seeds = config.seed_values();
    std::vector<std::string> targets = config.target_site.empty() ? config.source_sites : std::vector<std::string>{config.target_site};
    for (const auto& s : config.source_sites)
        for (auto seed : seeds)
            if (!single.models.count({s, seed}))
                fail("MissingCheckpoint", "single checkpoint for site " + s + " seed " + std::to_string(seed));
    const std::string tag = config.fewshot_fraction < 1.0 ? "fewshot" : "full";

    struct Job {
        std::string source, target;  // source empty: scratch control
        std::uint64_t seed;
    };
    std::vector<Job> work;
    for (auto seed : seeds)
        for (const auto& t : targets) {
            for (const auto& s : config.source_sites)
                if (s != t) work.push_back({s, t, seed});
            work.push_back({"", t, seed});
        }
    struct JobResult {
        std::vector<eval::MetricRow> metrics;
        std::vector<std::string> log;
    };
    auto results = parallel_map<JobResult>(work.size(), jobs, [&](size_t i) {
        const auto& job = work[i];
        const auto& target = find_source(sources, job.target);
        JobResult jr;
        std::string regime, name;
        FinetuneResult ft;
        if (!job.source.empty()) {
            const auto& src = find_source(sources, job.source);
            auto split = split_source(src, job.seed);
            FitStays fit{{job.source, stays_of(src, split.train)}};
            auto f = factory({&src}, fit);
            regime = tag + "_from_" + job.source;
            name = regime + ":" + job.target;
            ft = finetune(single.models.at({job.source, job.seed}).checkpoint, config, target, *f, config.fewshot_fraction,
                          job.seed, name);
        } else {
            // Fit the featurizer on the same training subset the model sees.
            EventTable probe;
            auto split = split_source(target, job.seed);
            auto f0 = factory({&target}, FitStays{{job.target, stays_of(target, split.train)}});
            auto enc = f0->encode(target, probe, limits_of(config));
            auto sub = fewshot_subset(apply_split(enc, split).train, config.fewshot_fraction, job.seed, job.target);
            std::set<std::string> sub_stays;
            for (const auto* ex : sub) sub_stays.insert(ex->stay_id);
            auto f = factory({&target}, FitStays{{job.target, sub_stays}});
            nn::Model<float> fresh(model_config(config, *f, tasks), util::derive_seed(job.seed, "init"));
            regime = "scratch_" + tag;
            name = regime + ":" + job.target;
            ft = finetune(nn::make_checkpoint(fresh, json{{"featurizer", json::parse(f->metadata_json())}}.dump()), config,
                          target, *f, config.fewshot_fraction, job.seed, name);
        }
        jr.log = std::move(ft.log);
        jr.log.push_back(json{{"run", name},
                              {"seed", job.seed},
                              {"event", "test"},
                              {"site", job.target},
                              {"selected_on", "valid:" + job.target},
                              {"checkpoint_step", ft.model.step},
                              {"val_auroc", opt_json(ft.model.val_auroc)},
                              {"test_task_mean", opt_json(ft.test.mean)}}
                             .dump());
        for (size_t k = 0; k < tasks.size(); ++k)
            jr.metrics.push_back(eval::MetricRow{job.target, regime, config.mode, tasks[k].task_id, job.seed, ft.test.auroc[k]});
        return jr;
    });
    TransferOutput out;
    for (auto& r : results) {
        out.metrics.insert(out.metrics.end(), r.metrics.begin(), r.metrics.end());
        out.log.insert(out.log.end(), r.log.begin(), r.log.end());
    }
    out.grid.sites = config.source_sites;
    out.scratch.sites = config.source_sites;
    for (const auto& t : targets) {
        if (auto d = mean_test_auroc(single.metrics, t, "single")) out.grid.cells[{t, t}] = *d;
        for (const auto& s : config.source_sites)
            if (s != t)
                if (auto v = mean_test_auroc(out.metrics, t, tag + "_from_" + s)) out.grid.cells[{s, t}] = *v;
        if (auto v = mean_test_auroc(out.metrics, t, "scratch_" + tag)) out.scratch.cells[{t, t}] = *v;
    }
    return out;
}

}  // namespace mlehr::train
