#include "mlehr/labels/labels.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"
#include "mlehr/error.hpp"
#include "mlehr/util/csv.hpp"
#include "mlehr/util/fs.hpp"
#include "mlehr/util/strings.hpp"

namespace mlehr::labels {

using nlohmann::json;

void WindowConfig::validate() const {
    if (!(observation_hours > 0) || !(gap_hours >= 0))
        fail("InvalidWindow", "observation_hours must be > 0 and gap_hours >= 0");
    if (min_stay_hours < observation_hours + gap_hours)
        fail("InvalidWindow", "min_stay_hours must be >= observation_hours + gap_hours");
}

WindowConfig parse_window_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        fail("InvalidWindow", e.what());
    }
    WindowConfig w;
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!it->is_number()) fail("InvalidWindow", it.key() + " must be a number");
        double v = it->get<double>();
        if (it.key() == "observation_hours")
            w.observation_hours = v;
        else if (it.key() == "gap_hours")
            w.gap_hours = v;
        else if (it.key() == "min_stay_hours")
            w.min_stay_hours = v;
        else if (it.key() == "min_age_years")
            w.min_age_years = v;
        else
            fail("UnknownKey", it.key());
    }
    w.validate();
    return w;
}

CutoffTable::CutoffTable(std::map<std::string, AnalyteCutoffs> analytes) : analytes_(std::move(analytes)) {
    for (const auto& [name, a] : analytes_) {
        if (a.cutoffs.empty()) fail("InvalidCutoffs", name + " has no cutoffs");
        for (size_t i = 0; i < a.cutoffs.size(); ++i) {
            if (!std::isfinite(a.cutoffs[i])) fail("InvalidCutoffs", name + " cutoff not finite");
            if (i > 0 && !(a.cutoffs[i] > a.cutoffs[i - 1])) fail("InvalidCutoffs", name + " cutoffs not increasing");
        }
    }
}

int CutoffTable::bin(const std::string& analyte, double value) const {
    auto it = analytes_.find(analyte);
    if (it == analytes_.end()) fail("UnknownAnalyte", analyte);
    if (!std::isfinite(value)) fail("NonFinite", analyte);
    const auto& c = it->second.cutoffs;
    return static_cast<int>(std::lower_bound(c.begin(), c.end(), value) - c.begin());
}

int CutoffTable::n_bins(const std::string& analyte) const {
    auto it = analytes_.find(analyte);
    if (it == analytes_.end()) fail("UnknownAnalyte", analyte);
    return static_cast<int>(it->second.cutoffs.size()) + 1;
}

CutoffTable parse_cutoffs(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        fail("InvalidCutoffs", e.what());
    }
    if (!j.contains("analytes") || !j["analytes"].is_object()) fail("InvalidCutoffs", "missing analytes");
    std::map<std::string, AnalyteCutoffs> out;
    for (auto it = j["analytes"].begin(); it != j["analytes"].end(); ++it) {
        AnalyteCutoffs a;
        a.unit = it->value("unit", "");
        if (!it->contains("cutoffs") || !(*it)["cutoffs"].is_array()) fail("InvalidCutoffs", it.key());
        for (const auto& c : (*it)["cutoffs"]) a.cutoffs.push_back(c.get<double>());
        out.emplace(it.key(), std::move(a));
    }
    return CutoffTable(std::move(out));
}

CutoffTable load_cutoffs(const std::filesystem::path& path) { return parse_cutoffs(util::read_text(path)); }

const CutoffTable& default_cutoffs() {
    static const CutoffTable table = load_cutoffs(util::asset_dir() / "cutoffs.json");
    return table;
}

const std::vector<std::string>& lab_analytes() {
    static const std::vector<std::string> names = {"creatinine", "platelets", "wbc",  "hemoglobin",
                                                   "bicarbonate", "sodium",   "urine"};
    return names;
}

std::vector<TaskSpec> make_tasks(const CutoffTable& cutoffs) {
    std::vector<TaskSpec> tasks;
    for (int k : {1, 2, 3, 7, 14})
        tasks.push_back({"mortality_" + std::to_string(k), TaskKind::binary, TaskFamily::mortality, k, 2, ""});
    for (int k : {7, 14}) tasks.push_back({"los_" + std::to_string(k), TaskKind::binary, TaskFamily::los, k, 2, ""});
    for (const auto& a : lab_analytes()) {
        for (int k : {1, 2, 3})
            tasks.push_back({a + "_" + std::to_string(k), TaskKind::multiclass, TaskFamily::lab, k, cutoffs.n_bins(a), a});
    }
    for (int k : {1, 2, 3}) tasks.push_back({"aki_" + std::to_string(k), TaskKind::multiclass, TaskFamily::aki, k, 4, ""});
    return tasks;
}

CohortResult build_cohort(std::vector<ICUStay> stays, const WindowConfig& w) {
    w.validate();
    CohortResult out;
    out.excluded = {{"age", 0}, {"short_stay", 0}, {"death_in_gap", 0}};
    for (auto& s : stays) {
        if (s.age_years < w.min_age_years) {
            ++out.excluded["age"];
        } else if (s.los_minutes() < w.min_stay_hours * 60.0) {
            ++out.excluded["short_stay"];
        } else if (auto d = s.death_offset(); d && *d <= w.t0_minutes()) {
            ++out.excluded["death_in_gap"];
        } else {
            out.stays.push_back(std::move(s));
        }
    }
    return out;
}

int label_mortality(const ICUStay& stay, int k, const WindowConfig& w) {
    auto d = stay.death_offset();
    if (!d) return 0;
    const double t0 = w.t0_minutes();
    return (*d > t0 && *d <= t0 + k * 1440.0) ? 1 : 0;
}

int label_los(const ICUStay& stay, int k, const WindowConfig& w) {
    return (stay.los_minutes() - w.t0_minutes()) > k * 1440.0 ? 1 : 0;
}

std::vector<std::optional<double>> urine_slots(const std::vector<core::Measurement>& urine_ml, double weight_kg,
                                               int k, const WindowConfig& w) {
    const double t0 = w.t0_minutes();
    const int n = k * 24;
    std::vector<std::optional<double>> slots(static_cast<size_t>(n));
    for (const auto& m : urine_ml) {
        if (!(m.minute > t0) || m.minute > t0 + n * 60.0) continue;
        auto j = static_cast<long>(std::ceil((m.minute - t0) / 60.0)) - 1;
        j = std::clamp<long>(j, 0, n - 1);
        auto& slot = slots[static_cast<size_t>(j)];
        slot = slot.value_or(0.0) + m.value;
    }
    for (auto& s : slots) {
        if (s) *s /= weight_kg;
    }
    return slots;
}

StayObservations observe(const ICUStay& stay, const core::SiteManifest& manifest) {
    StayObservations obs;
    for (const auto& [name, src] : manifest.analyte_map) obs.analytes.emplace(name, core::extract_variable(stay, src));
    return obs;
}

namespace {

bool dialysis_masked(const std::string& analyte) { return analyte == "creatinine" || analyte == "urine"; }

std::optional<double> latest_in(const std::vector<core::Measurement>& ms, double lo, double hi) {
    std::optional<double> out;
    double at = -1e300;
    for (const auto& m : ms) {
        if (m.minute > lo && m.minute <= hi && m.minute >= at) {
            at = m.minute;
            out = m.value;
        }
    }
    return out;
}

std::optional<double> min_in(const std::vector<core::Measurement>& ms, double lo, double hi) {
    std::optional<double> out;
    for (const auto& m : ms) {
        if (m.minute >= lo && m.minute <= hi) out = out ? std::min(*out, m.value) : m.value;
    }
    return out;
}

const std::vector<core::Measurement>* find_series(const StayObservations& obs, const std::string& name) {
    auto it = obs.analytes.find(name);
    return it == obs.analytes.end() ? nullptr : &it->second;
}

}  // namespace

int label_lab_task(const ICUStay& stay, const StayObservations& obs, const std::string& analyte, int k,
                   const CutoffTable& cutoffs, const WindowConfig& w) {
    if (stay.dialysis && dialysis_masked(analyte)) return kNull;
    const auto* series = find_series(obs, analyte);
    if (!series) return kNull;
    const double t0 = w.t0_minutes();
    if (analyte == "urine") {
        if (!stay.weight_kg) return kNull;
        auto slots = urine_slots(*series, *stay.weight_kg, k, w);
        for (auto it = slots.rbegin(); it != slots.rend(); ++it) {
            if (*it) return cutoffs.bin(analyte, **it);
        }
        return kNull;
    }
    auto v = latest_in(*series, t0, t0 + k * 1440.0);
    if (!v) return kNull;
    return cutoffs.bin(analyte, *v);
}

int creatinine_stage(double baseline, double latest) {
    const double r = latest / baseline;
    if (r >= 3.0) return 3;
    if (r >= 2.0) return 2;
    if (r >= 1.5) return 1;
    return 0;
}

int urine_stage(const std::vector<std::optional<double>>& slots) {
    int run05 = 0, run03 = 0, run0 = 0;
    int best05 = 0, best03 = 0, best0 = 0;
    for (const auto& s : slots) {
        if (!s) {
            run05 = run03 = run0 = 0;
            continue;
        }
        run05 = *s < 0.5 ? run05 + 1 : 0;
        run03 = *s < 0.3 ? run03 + 1 : 0;
        run0 = *s <= 0.0 ? run0 + 1 : 0;
        best05 = std::max(best05, run05);
        best03 = std::max(best03, run03);
        best0 = std::max(best0, run0);
    }
    if (best03 >= 24 || best0 >= 12) return 3;
    if (best05 >= 12) return 2;
    if (best05 >= 6) return 1;
    return 0;
}

int label_aki(const ICUStay& stay, const StayObservations& obs, int k, const WindowConfig& w) {
    if (stay.dialysis) return kNull;
    const auto* creat = find_series(obs, "creatinine");
    if (!creat) return kNull;
    const double t0 = w.t0_minutes();
    auto baseline = min_in(*creat, 0.0, w.observation_end_minutes());
    auto latest = latest_in(*creat, t0, t0 + k * 1440.0);
    if (!baseline || !latest || !(*baseline > 0)) return kNull;
    int stage = creatinine_stage(*baseline, *latest);
    const auto* urine = find_series(obs, "urine");
    if (urine && stay.weight_kg) stage = std::max(stage, urine_stage(urine_slots(*urine, *stay.weight_kg, k, w)));
    return stage;
}

LabelVector label_stay(const ICUStay& stay, const core::SiteManifest& manifest, const std::vector<TaskSpec>& tasks,
                       const CutoffTable& cutoffs, const WindowConfig& w) {
    auto obs = observe(stay, manifest);
    LabelVector out;
    out.reserve(tasks.size());
    for (const auto& t : tasks) {
        switch (t.family) {
            case TaskFamily::mortality: out.push_back(label_mortality(stay, t.horizon_days, w)); break;
            case TaskFamily::los: out.push_back(label_los(stay, t.horizon_days, w)); break;
            case TaskFamily::lab:
                out.push_back(label_lab_task(stay, obs, t.analyte, t.horizon_days, cutoffs, w));
                break;
            case TaskFamily::aki: out.push_back(label_aki(stay, obs, t.horizon_days, w)); break;
        }
    }
    return out;
}

LabeledCohort label_cohort(const std::vector<ICUStay>& stays, const core::SiteManifest& manifest,
                           const std::vector<TaskSpec>& tasks, const CutoffTable& cutoffs, const WindowConfig& w) {
    auto cohort = build_cohort(stays, w);
    LabeledCohort out;
    out.excluded = std::move(cohort.excluded);
    for (const auto& s : cohort.stays)
        out.rows.push_back(LabeledStay{s.patient_id, s.stay_id, label_stay(s, manifest, tasks, cutoffs, w)});
    return out;
}

std::string labels_csv(const std::vector<TaskSpec>& tasks, const std::vector<LabeledStay>& rows) {
    std::vector<std::string> header = {"patient_id", "stay_id"};
    for (const auto& t : tasks) header.push_back(t.task_id);
    std::string out = util::csv_line(header);
    for (const auto& r : rows) {
        std::vector<std::string> fields = {r.patient_id, r.stay_id};
        for (int v : r.labels) fields.push_back(std::to_string(v));
        out += util::csv_line(fields);
    }
    return out;
}

std::vector<LabeledStay> parse_labels_csv(const std::string& text, const std::vector<TaskSpec>& tasks) {
    auto table = util::parse_csv(text, "labels.csv");
    auto c_pat = table.column("patient_id");
    auto c_stay = table.column("stay_id");
    if (!c_pat || !c_stay) fail("MissingColumn", "labels.csv");
    std::vector<size_t> cols;
    for (const auto& t : tasks) {
        auto c = table.column(t.task_id);
        if (!c) fail("MissingColumn", "labels.csv:" + t.task_id);
        cols.push_back(*c);
    }
    std::vector<LabeledStay> out;
    for (const auto& row : table.rows) {
        LabeledStay ls{row[*c_pat], row[*c_stay], {}};
        for (size_t c : cols) {
            auto v = util::parse_int(row[c]);
            if (!v) fail("CsvParse", "labels.csv bad label " + row[c]);
            ls.labels.push_back(static_cast<int>(*v));
        }
        out.push_back(std::move(ls));
    }
    return out;
}

std::string label_stats_csv(const std::vector<TaskSpec>& tasks, const std::vector<LabeledStay>& rows) {
    std::string out = util::csv_line({"task", "class", "count", "percent"});
    for (size_t t = 0; t < tasks.size(); ++t) {
        std::vector<size_t> counts(static_cast<size_t>(tasks[t].n_classes) + 1, 0);
        for (const auto& r : rows) {
            int v = r.labels[t];
            counts[v < 0 ? counts.size() - 1 : static_cast<size_t>(v)]++;
        }
        for (size_t c = 0; c < counts.size(); ++c) {
            double pct = rows.empty() ? 0.0 : 100.0 * static_cast<double>(counts[c]) / static_cast<double>(rows.size());
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.2f", pct);
            out += util::csv_line({tasks[t].task_id, c + 1 == counts.size() ? "null" : std::to_string(c),
                                   std::to_string(counts[c]), buf});
        }
    }
    return out;
}

}  // namespace mlehr::labels
