#include "mlehr/train/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"
#include "mlehr/core/variables.hpp"
#include "mlehr/error.hpp"
#include "mlehr/util/strings.hpp"

namespace mlehr::train {

using nlohmann::json;

size_t EventTable::Hash::operator()(const std::vector<std::int32_t>& v) const {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::int32_t x : v) {
        h ^= static_cast<std::uint32_t>(x);
        h *= 1099511628211ULL;
    }
    return static_cast<size_t>(h);
}

int EventTable::intern(std::vector<std::int32_t> tokens) {
    if (!features_.empty()) fail("InvalidConfig", "event table already holds feature rows");
    auto it = index_.find(tokens);
    if (it != index_.end()) return it->second;
    int id = static_cast<int>(tokens_.size());
    index_.emplace(tokens, id);
    tokens_.push_back(std::move(tokens));
    return id;
}

int EventTable::add_features(std::vector<float> row) {
    if (!tokens_.empty()) fail("InvalidConfig", "event table already holds token payloads");
    features_.push_back(std::move(row));
    return static_cast<int>(features_.size() - 1);
}

namespace {

// Keeps the most recent `cap` events of a stay.
void cap_events(Example& ex, int cap, EncodeCounters& counters) {
    if (static_cast<int>(ex.events.size()) <= cap) return;
    size_t drop = ex.events.size() - static_cast<size_t>(cap);
    counters.truncated_events += drop;
    ex.events.erase(ex.events.begin(), ex.events.begin() + static_cast<std::ptrdiff_t>(drop));
    ex.minutes.erase(ex.minutes.begin(), ex.minutes.begin() + static_cast<std::ptrdiff_t>(drop));
}

std::map<std::string, const ICUStay*> stay_index(const std::vector<ICUStay>& stays) {
    std::map<std::string, const ICUStay*> out;
    for (const auto& s : stays) out[s.stay_id] = &s;
    return out;
}

class TextFeaturizer : public Featurizer {
   public:
    explicit TextFeaturizer(std::shared_ptr<const tok::Tokenizer> tok) : tok_(std::move(tok)) {
        if (!tok_) fail("InvalidConfig", "text featurizer needs a tokenizer");
    }
    nn::EncoderKind kind() const override { return nn::EncoderKind::text; }
    void configure(nn::ModelConfig& config) const override {
        config.kind = nn::EncoderKind::text;
        config.vocab_types = static_cast<int>(tok_->type_count());
    }
    EncodedSite encode(const SiteSource& site, EventTable& table, const EncodeLimits& limits) const override {
        EncodedSite out;
        out.site_id = site.site_id;
        std::map<std::string, std::vector<const text::CorpusRecord*>> by_stay;
        for (const auto& r : site.corpus)
            if (r.timestamp >= 0.0 && r.timestamp <= limits.window_end_minutes) by_stay[r.stay_id].push_back(&r);
        std::unordered_map<std::string, int> cache;
        for (const auto& ls : site.labels) {
            auto it = by_stay.find(ls.stay_id);
            if (it == by_stay.end()) {
                ++out.counters.stays_without_events;
                continue;
            }
            Example ex{ls.patient_id, ls.stay_id, {}, {}, ls.labels};
            auto records = it->second;
            std::stable_sort(records.begin(), records.end(),
                             [](const auto* a, const auto* b) { return a->timestamp < b->timestamp; });
            for (const auto* r : records) {
                auto c = cache.find(r->text);
                int id;
                if (c != cache.end()) {
                    id = c->second;
                } else {
                    auto ids = tok_->encode(r->text);
                    if (static_cast<int>(ids.size()) > limits.max_tokens_per_event) {
                        out.counters.truncated_tokens += ids.size() - static_cast<size_t>(limits.max_tokens_per_event);
                        ids.resize(static_cast<size_t>(limits.max_tokens_per_event));
                    }
                    if (ids.empty()) continue;
                    id = table.intern(std::move(ids));
                    cache.emplace(r->text, id);
                }
                ex.events.push_back(id);
                ex.minutes.push_back(r->timestamp);
            }
            if (ex.events.empty()) {
                ++out.counters.stays_without_events;
                continue;
            }
            cap_events(ex, limits.max_events_per_stay, out.counters);
            out.stays.push_back(std::move(ex));
        }
        return out;
    }
    std::string metadata_json() const override {
        return json{{"kind", "text"}, {"tokenizer_types", tok_->type_count()}}.dump();
    }

   private:
    std::shared_ptr<const tok::Tokenizer> tok_;
};

std::set<std::string> code_columns(const core::SiteManifest& m) {
    std::set<std::string> out;
    for (const auto* map : {&m.analyte_map, &m.common_variable_map})
        for (const auto& [name, src] : *map)
            if (!src.match_column.empty()) out.insert(src.match_column);
    return out;
}

struct CodedEvent {
    std::string code;
    std::vector<std::pair<std::string, double>> values;  // (slot, value)
};

std::vector<CodedEvent> coded_window(const ICUStay& stay, const std::set<std::string>& code_cols, double window_end) {
    std::vector<CodedEvent> out;
    for (const auto& e : stay.events) {
        if (e.timestamp < 0.0 || e.timestamp > window_end) continue;
        CodedEvent c;
        c.code = e.event_type;
        for (const auto& f : e.features) {
            if (!f.is_number()) {
                c.code += "\x1f" + f.name + "=" + f.text();
            } else if (code_cols.count(f.name)) {
                c.code += "\x1f" + f.name + "=" + util::format_double(f.number());
            } else {
                c.values.emplace_back(e.event_type + "\x1f" + f.name, f.number());
            }
        }
        out.push_back(std::move(c));
    }
    return out;
}

// Identifier columns removed, as for the text encoder.
std::vector<ICUStay> cleaned_stays(const core::SiteData& data) {
    auto stays = data.stays;
    text::drop_identifier_columns(stays, text::identifier_columns(stays, data.manifest));
    return stays;
}

class CodeFeaturizer : public Featurizer {
   public:
    CodeFeaturizer(std::map<std::string, int> codes, std::map<std::string, std::vector<double>> edges, int bins)
        : codes_(std::move(codes)), bins_(bins) {
        int row = 1;
        for (auto& [slot, e] : edges) {
            slots_[slot] = Slot{row, std::move(e)};
            row += bins_;
        }
        bin_rows_ = row;
    }
    nn::EncoderKind kind() const override { return nn::EncoderKind::code_based; }
    void configure(nn::ModelConfig& config) const override {
        config.kind = nn::EncoderKind::code_based;
        config.code_vocab = static_cast<int>(codes_.size()) + 1;
        config.bin_vocab = bin_rows_;
    }
    EncodedSite encode(const SiteSource& site, EventTable& table, const EncodeLimits& limits) const override {
        if (!site.data) fail("InvalidConfig", "code featurizer needs raw site data for " + site.site_id);
        EncodedSite out;
        out.site_id = site.site_id;
        auto stays = cleaned_stays(*site.data);
        auto index = stay_index(stays);
        auto cols = code_columns(site.data->manifest);
        for (const auto& ls : site.labels) {
            auto it = index.find(ls.stay_id);
            Example ex{ls.patient_id, ls.stay_id, {}, {}, ls.labels};
            if (it != index.end()) {
                size_t k = 0;
                const auto coded = coded_window(*it->second, cols, limits.window_end_minutes);
                for (const auto& e : it->second->events) {
                    if (e.timestamp < 0.0 || e.timestamp > limits.window_end_minutes) continue;
                    const auto& c = coded[k++];
                    std::vector<std::int32_t> payload;
                    auto ci = codes_.find(c.code);
                    payload.push_back(ci == codes_.end() ? 0 : ci->second);
                    for (const auto& [slot, v] : c.values) {
                        auto si = slots_.find(slot);
                        payload.push_back(si == slots_.end() ? 0 : si->second.first_row + quantile_bin(si->second.edges, v));
                    }
                    ex.events.push_back(table.intern(std::move(payload)));
                    ex.minutes.push_back(e.timestamp);
                }
            }
            if (ex.events.empty()) {
                ++out.counters.stays_without_events;
                continue;
            }
            cap_events(ex, limits.max_events_per_stay, out.counters);
            out.stays.push_back(std::move(ex));
        }
        return out;
    }
    std::string metadata_json() const override {
        json codes = json::object();
        for (const auto& [c, id] : codes_) codes[c] = id;
        json slots = json::object();
        for (const auto& [s, slot] : slots_) slots[s] = {{"first_row", slot.first_row}, {"edges", slot.edges}};
        return json{{"kind", "code_based"}, {"bins", bins_}, {"codes", codes}, {"slots", slots}}.dump();
    }

   private:
    struct Slot {
        int first_row = 1;
        std::vector<double> edges;
    };
    std::map<std::string, int> codes_;
    std::map<std::string, Slot> slots_;
    int bins_;
    int bin_rows_ = 1;
};

class CommonFeaturizer : public Featurizer {
   public:
    CommonFeaturizer(std::vector<std::string> variables, std::vector<double> mean, std::vector<double> scale, int hours)
        : vars_(std::move(variables)), mean_(std::move(mean)), scale_(std::move(scale)), hours_(hours) {}
    nn::EncoderKind kind() const override { return nn::EncoderKind::common_feature; }
    void configure(nn::ModelConfig& config) const override {
        config.kind = nn::EncoderKind::common_feature;
        config.common_inputs = 2 * static_cast<int>(vars_.size());
    }
    EncodedSite encode(const SiteSource& site, EventTable& table, const EncodeLimits& limits) const override {
        if (!site.data) fail("InvalidConfig", "common-feature featurizer needs raw site data for " + site.site_id);
        EncodedSite out;
        out.site_id = site.site_id;
        auto index = stay_index(site.data->stays);
        const size_t k = vars_.size();
        for (const auto& ls : site.labels) {
            auto it = index.find(ls.stay_id);
            if (it == index.end()) {
                ++out.counters.stays_without_events;
                continue;
            }
            auto grid = common_grid(*it->second, site.data->manifest, vars_, hours_);
            Example ex{ls.patient_id, ls.stay_id, {}, {}, ls.labels};
            std::vector<double> last(k, std::numeric_limits<double>::quiet_NaN());
            for (int h = 0; h < hours_; ++h) {
                std::vector<float> row(2 * k, 0.0f);
                for (size_t v = 0; v < k; ++v) {
                    double x = grid.values[static_cast<size_t>(h)][v];
                    if (std::isnan(x)) {
                        row[k + v] = 1.0f;
                    } else {
                        last[v] = (x - mean_[v]) / scale_[v];
                    }
                    row[v] = std::isnan(last[v]) ? 0.0f : static_cast<float>(last[v]);
                }
                ex.events.push_back(table.add_features(std::move(row)));
                ex.minutes.push_back(60.0 * h + 30.0);
            }
            cap_events(ex, limits.max_events_per_stay, out.counters);
            out.stays.push_back(std::move(ex));
        }
        return out;
    }
    std::string metadata_json() const override {
        return json{{"kind", "common_feature"}, {"variables", vars_}, {"mean", mean_}, {"scale", scale_}, {"hours", hours_}}
            .dump();
    }

   private:
    std::vector<std::string> vars_;
    std::vector<double> mean_, scale_;
    int hours_;
};

}  // namespace

std::unique_ptr<Featurizer> make_text_featurizer(std::shared_ptr<const tok::Tokenizer> tokenizer) {
    return std::make_unique<TextFeaturizer>(std::move(tokenizer));
}

int quantile_bin(const std::vector<double>& edges, double v) {
    return static_cast<int>(std::lower_bound(edges.begin(), edges.end(), v) - edges.begin());
}

std::vector<double> quantile_edges(std::vector<double> values, int bins) {
    if (bins < 1) fail("InvalidConfig", "bins must be positive");
    std::vector<double> edges;
    if (values.empty()) return edges;
    std::sort(values.begin(), values.end());
    const double n = static_cast<double>(values.size());
    for (int k = 1; k < bins; ++k) {
        // Linear interpolation between order statistics.
        double pos = (n - 1.0) * k / bins;
        size_t lo = static_cast<size_t>(std::floor(pos));
        size_t hi = std::min(lo + 1, values.size() - 1);
        double frac = pos - static_cast<double>(lo);
        edges.push_back(values[lo] + (values[hi] - values[lo]) * frac);
    }
    return edges;
}

std::unique_ptr<Featurizer> fit_code_featurizer(const std::vector<const SiteSource*>& sites, const FitStays& fit, int bins,
                                                const EncodeLimits& limits) {
    std::set<std::string> codes;
    std::map<std::string, std::vector<double>> values;
    for (const auto* site : sites) {
        if (!site->data) fail("InvalidConfig", "code featurizer needs raw site data for " + site->site_id);
        auto f = fit.find(site->site_id);
        if (f == fit.end()) continue;
        auto cols = code_columns(site->data->manifest);
        for (const auto& stay : cleaned_stays(*site->data)) {
            if (!f->second.count(stay.stay_id)) continue;
            for (auto& c : coded_window(stay, cols, limits.window_end_minutes)) {
                codes.insert(c.code);
                for (const auto& [slot, v] : c.values) values[slot].push_back(v);
            }
        }
    }
    std::map<std::string, int> code_ids;
    int next = 1;
    for (const auto& c : codes) code_ids[c] = next++;
    std::map<std::string, std::vector<double>> edges;
    for (auto& [slot, v] : values) edges[slot] = quantile_edges(std::move(v), bins);
    return std::make_unique<CodeFeaturizer>(std::move(code_ids), std::move(edges), bins);
}

CommonGrid common_grid(const ICUStay& stay, const core::SiteManifest& manifest, const std::vector<std::string>& variables,
                       int hours) {
    CommonGrid g;
    g.hours = hours;
    g.variables = variables;
    g.values.assign(static_cast<size_t>(hours),
                    std::vector<double>(variables.size(), std::numeric_limits<double>::quiet_NaN()));
    for (size_t v = 0; v < variables.size(); ++v) {
        auto it = manifest.common_variable_map.find(variables[v]);
        if (it == manifest.common_variable_map.end()) continue;
        auto ms = core::extract_variable(stay, it->second);
        std::stable_sort(ms.begin(), ms.end(), [](const auto& a, const auto& b) { return a.minute < b.minute; });
        for (const auto& m : ms) {
            if (m.minute < 0.0 || m.minute > 60.0 * hours) continue;
            int h = std::min(hours - 1, static_cast<int>(std::floor(m.minute / 60.0)));
            g.values[static_cast<size_t>(h)][v] = m.value;
        }
    }
    return g;
}

std::unique_ptr<Featurizer> fit_common_featurizer(const std::vector<const SiteSource*>& sites, const FitStays& fit,
                                                  std::vector<std::string> variables, int hours) {
    if (variables.empty()) {
        std::set<std::string> all;
        for (const auto* s : sites)
            if (s->data)
                for (const auto& [name, src] : s->data->manifest.common_variable_map) all.insert(name);
        variables.assign(all.begin(), all.end());
    }
    if (variables.empty()) fail("InvalidConfig", "no common variables");
    std::vector<double> sum(variables.size(), 0.0), sq(variables.size(), 0.0), n(variables.size(), 0.0);
    for (const auto* site : sites) {
        if (!site->data) fail("InvalidConfig", "common-feature featurizer needs raw site data for " + site->site_id);
        auto f = fit.find(site->site_id);
        if (f == fit.end()) continue;
        for (const auto& stay : site->data->stays) {
            if (!f->second.count(stay.stay_id)) continue;
            auto g = common_grid(stay, site->data->manifest, variables, hours);
            for (const auto& row : g.values)
                for (size_t v = 0; v < variables.size(); ++v)
                    if (!std::isnan(row[v])) {
                        sum[v] += row[v];
                        sq[v] += row[v] * row[v];
                        n[v] += 1.0;
                    }
        }
    }
    std::vector<double> mean(variables.size(), 0.0), scale(variables.size(), 1.0);
    for (size_t v = 0; v < variables.size(); ++v) {
        if (n[v] == 0.0) continue;
        mean[v] = sum[v] / n[v];
        double var = sq[v] / n[v] - mean[v] * mean[v];
        scale[v] = var > 1e-12 ? std::sqrt(var) : 1.0;
    }
    return std::make_unique<CommonFeaturizer>(std::move(variables), std::move(mean), std::move(scale), hours);
}

}  // namespace mlehr::train
