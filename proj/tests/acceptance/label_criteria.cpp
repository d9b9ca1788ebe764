// Label oracle: re-derives every label from the raw CSV files and the manifest
// with its own parsing and its own rules, then compares with the pipeline.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "harness.hpp"
#include "json.hpp"
#include "mlehr/core/ingest.hpp"
#include "mlehr/labels/labels.hpp"
#include "mlehr/synth/generator.hpp"
#include "mlehr/util/fs.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

struct Table {
    std::map<std::string, size_t> col;
    std::vector<std::vector<std::string>> rows;
    const std::string& at(size_t r, const std::string& name) const { return rows[r][col.at(name)]; }
};

Table read_table(const fs::path& p) {
    std::istringstream in(slurp(p));
    Table t;
    std::string line;
    std::getline(in, line);
    auto header = split_csv_line(line);
    for (size_t i = 0; i < header.size(); ++i) t.col[header[i]] = i;
    while (std::getline(in, line))
        if (!line.empty()) t.rows.push_back(split_csv_line(line));
    return t;
}

std::string strip(const std::string& s) {
    size_t a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
}

std::optional<double> number(const std::string& raw) {
    std::string s = strip(raw);
    if (s.empty()) return std::nullopt;
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

std::optional<double> minutes(const std::string& raw) {
    if (auto v = number(raw)) return v;
    std::string s = strip(raw);
    int y, mo, d, h, mi;
    double sec = 0;
    char sep;
    if (std::sscanf(s.c_str(), "%4d-%2d-%2d%c%2d:%2d", &y, &mo, &d, &sep, &h, &mi) != 6) return std::nullopt;
    if (s.size() > 16) sec = std::stod(s.substr(17));
    using namespace std::chrono;
    auto days = sys_days{year{y} / month{static_cast<unsigned>(mo)} / day{static_cast<unsigned>(d)}}.time_since_epoch().count();
    return static_cast<double>(days) * 1440.0 + h * 60.0 + mi + sec / 60.0;
}

struct Stay {
    std::string patient, stay;
    double admit = 0, discharge = 0, age = 0;
    std::optional<double> death, weight;
    bool dialysis = false;
    std::map<std::string, std::vector<std::pair<double, double>>> series;  // analyte -> (minute, value)
};

std::map<std::string, std::vector<double>> read_cutoffs() {
    json j = json::parse(slurp(mlehr::util::asset_dir() / "cutoffs.json"));
    std::map<std::string, std::vector<double>> out;
    for (auto it = j["analytes"].begin(); it != j["analytes"].end(); ++it)
        out[it.key()] = (*it)["cutoffs"].get<std::vector<double>>();
    return out;
}

int bin_of(const std::vector<double>& cut, double v) {
    int b = 0;
    for (double c : cut)
        if (v > c) ++b;
    return b;
}

std::vector<Stay> scan_site(const fs::path& dir) {
    json m = json::parse(slurp(dir / "manifest.json"));
    const auto& st = m["stays"];
    Table stays = read_table(dir / st["file_path"].get<std::string>());
    std::vector<Stay> out;
    std::map<std::pair<std::string, std::string>, size_t> index;
    for (size_t r = 0; r < stays.rows.size(); ++r) {
        Stay s;
        s.patient = strip(stays.at(r, st["patient_column"]));
        s.stay = strip(stays.at(r, st["stay_column"]));
        s.admit = *minutes(stays.at(r, st["admit_column"]));
        s.discharge = *minutes(stays.at(r, st["discharge_column"]));
        s.age = *number(stays.at(r, st["age_column"]));
        s.death = minutes(stays.at(r, st["death_column"]));
        if (st.contains("weight_column")) {
            auto w = number(stays.at(r, st["weight_column"]));
            if (w && *w > 0) s.weight = w;
        }
        if (st.contains("dialysis_column")) {
            std::string f = strip(stays.at(r, st["dialysis_column"]));
            for (auto& ch : f) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
            s.dialysis = f == "1" || f == "true" || f == "yes" || f == "y" || f == "t";
        }
        index[{s.patient, s.stay}] = out.size();
        out.push_back(std::move(s));
    }
    std::map<std::string, json> tables;
    for (const auto& t : m["tables"]) tables[t["name"].get<std::string>()] = t;
    std::map<std::string, Table> loaded;
    for (auto it = m["analyte_map"].begin(); it != m["analyte_map"].end(); ++it) {
        const json& src = *it;
        const json& spec = tables.at(src["table"].get<std::string>());
        auto name = spec["name"].get<std::string>();
        if (!loaded.count(name)) loaded[name] = read_table(dir / spec["file_path"].get<std::string>());
        const Table& t = loaded[name];
        const std::string match_col = src.value("match_column", "");
        const std::string match_val = src.value("match_value", "");
        const double scale = src.value("unit_scale", 1.0);
        for (auto& s : out) s.series[it.key()];
        for (size_t r = 0; r < t.rows.size(); ++r) {
            auto k = index.find({strip(t.at(r, spec["patient_column"])), strip(t.at(r, spec["stay_column"]))});
            if (k == index.end()) continue;
            auto ts = minutes(t.at(r, spec["timestamp_column"]));
            if (!ts) continue;
            if (!match_col.empty()) {
                const std::string cell = strip(t.at(r, match_col));
                auto a = number(cell), b = number(match_val);
                if (a && b ? *a != *b : cell != match_val) continue;
            }
            auto v = number(t.at(r, src["column"]));
            if (!v) continue;
            Stay& s = out[k->second];
            s.series[it.key()].push_back({*ts - s.admit, *v * scale});
        }
    }
    return out;
}

// Hourly urine (mL/kg) over (t0, t0 + 24k]; hour j covers (t0 + 60j, t0 + 60(j+1)].
std::vector<std::optional<double>> hourly_urine(const std::vector<std::pair<double, double>>& ml, double kg, int k) {
    const double t0 = 1440.0;
    std::vector<std::optional<double>> hours(static_cast<size_t>(24 * k));
    for (const auto& [t, v] : ml) {
        if (t <= t0 || t > t0 + 1440.0 * k) continue;
        size_t j = 0;
        while (t > t0 + 60.0 * static_cast<double>(j + 1)) ++j;
        hours[j] = hours[j].value_or(0.0) + v;
    }
    for (auto& h : hours)
        if (h) *h /= kg;
    return hours;
}

int longest_run(const std::vector<std::optional<double>>& hours, const std::function<bool(double)>& pred) {
    int best = 0, run = 0;
    for (const auto& h : hours) {
        run = h && pred(*h) ? run + 1 : 0;
        best = std::max(best, run);
    }
    return best;
}

std::optional<double> latest(const std::vector<std::pair<double, double>>& s, double lo, double hi) {
    std::optional<std::pair<double, double>> pick;
    for (const auto& p : s)
        if (p.first > lo && p.first <= hi && (!pick || p.first >= pick->first)) pick = p;
    if (!pick) return std::nullopt;
    return pick->second;
}

// task_id -> label for one cohort stay.
std::map<std::string, int> oracle_labels(const Stay& s, const std::map<std::string, std::vector<double>>& cut) {
    std::map<std::string, int> out;
    const double t0 = 1440.0;
    const std::optional<double> death = s.death ? std::optional<double>(*s.death - s.admit) : std::nullopt;
    for (int k : {1, 2, 3, 7, 14}) out["mortality_" + std::to_string(k)] = death && *death > t0 && *death <= t0 + 1440.0 * k;
    for (int k : {7, 14}) out["los_" + std::to_string(k)] = (s.discharge - s.admit) - t0 > 1440.0 * k;
    for (const auto& analyte : {"creatinine", "platelets", "wbc", "hemoglobin", "bicarbonate", "sodium", "urine"}) {
        const std::string a = analyte;
        const bool renal = a == "creatinine" || a == "urine";
        for (int k : {1, 2, 3}) {
            int label = -1;
            auto it = s.series.find(a);
            if (!(renal && s.dialysis) && it != s.series.end()) {
                if (a == "urine") {
                    if (s.weight) {
                        auto hours = hourly_urine(it->second, *s.weight, k);
                        for (auto h = hours.rbegin(); h != hours.rend(); ++h)
                            if (*h) {
                                label = bin_of(cut.at(a), **h);
                                break;
                            }
                    }
                } else if (auto v = latest(it->second, t0, t0 + 1440.0 * k)) {
                    label = bin_of(cut.at(a), *v);
                }
            }
            out[a + "_" + std::to_string(k)] = label;
        }
    }
    for (int k : {1, 2, 3}) {
        int stage = -1;
        auto cr = s.series.find("creatinine");
        if (!s.dialysis && cr != s.series.end()) {
            std::optional<double> base;
            for (const auto& [t, v] : cr->second)
                if (t >= 0 && t <= 720.0) base = base ? std::min(*base, v) : v;
            auto last = latest(cr->second, t0, t0 + 1440.0 * k);
            if (base && last && *base > 0) {
                double r = *last / *base;
                stage = r >= 3.0 ? 3 : r >= 2.0 ? 2 : r >= 1.5 ? 1 : 0;
                auto ur = s.series.find("urine");
                if (ur != s.series.end() && s.weight) {
                    auto hours = hourly_urine(ur->second, *s.weight, k);
                    int u = 0;
                    if (longest_run(hours, [](double x) { return x < 0.5; }) >= 6) u = 1;
                    if (longest_run(hours, [](double x) { return x < 0.5; }) >= 12) u = 2;
                    if (longest_run(hours, [](double x) { return x < 0.3; }) >= 24 ||
                        longest_run(hours, [](double x) { return x <= 0.0; }) >= 12)
                        u = 3;
                    stage = std::max(stage, u);
                }
            }
        }
        out["aki_" + std::to_string(k)] = stage;
    }
    return out;
}

bool in_cohort(const Stay& s) {
    if (s.age < 18.0) return false;
    if (s.discharge - s.admit < 24.0 * 60.0) return false;
    if (s.death && *s.death - s.admit <= 1440.0) return false;
    return true;
}

acceptance::Outcome label_oracle() {
    using namespace mlehr;
    const auto start = std::chrono::steady_clock::now();
    acceptance::Scratch dir("labels");
    synth::GeneratorConfig cfg;
    const int sizes[3] = {1667, 1667, 1666};
    const Language langs[3] = {Language::en, Language::nl, Language::de};
    for (int v = 0; v < 3; ++v) {
        synth::SiteConfig s;
        s.site_id = "site" + std::to_string(v);
        s.language = langs[v];
        s.n_stays = sizes[v];
        s.schema_variant = v;
        cfg.sites.push_back(s);
    }
    synth::write_generated(synth::generate(cfg), dir.path());
    const auto cutoffs = read_cutoffs();
    auto tasks = labels::make_tasks(labels::default_cutoffs());
    size_t stays = 0, compared = 0, mismatches = 0, cohort_diff = 0;
    std::string first;
    for (const auto& site : cfg.sites) {
        fs::path sdir = fs::path(dir.path()) / site.site_id;
        auto data = core::ingest_site(core::parse_manifest(sdir / "manifest.json"));
        auto got = labels::label_cohort(data.stays, data.manifest, tasks, labels::default_cutoffs(), {});
        std::map<std::string, const labels::LabeledStay*> by_stay;
        for (const auto& r : got.rows) by_stay[r.stay_id] = &r;
        auto raw = scan_site(sdir);
        stays += raw.size();
        std::set<std::string> expected_cohort;
        for (const auto& s : raw) {
            if (!in_cohort(s)) continue;
            expected_cohort.insert(s.stay);
            auto it = by_stay.find(s.stay);
            if (it == by_stay.end()) continue;
            auto want = oracle_labels(s, cutoffs);
            for (size_t t = 0; t < tasks.size(); ++t) {
                ++compared;
                auto w = want.find(tasks[t].task_id);
                if (w == want.end() || w->second != it->second->labels[t]) {
                    ++mismatches;
                    if (first.empty())
                        first = s.stay + "/" + tasks[t].task_id + " pipeline " + std::to_string(it->second->labels[t]) +
                                " oracle " + (w == want.end() ? std::string("none") : std::to_string(w->second));
                }
            }
            if (want.size() != tasks.size()) ++mismatches;
        }
        for (const auto& [id, r] : by_stay) cohort_diff += !expected_cohort.count(id);
        for (const auto& id : expected_cohort) cohort_diff += !by_stay.count(id);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    bool pass = stays == 5000 && mismatches == 0 && cohort_diff == 0 && compared > 0 && secs < 60.0;
    std::string detail = acceptance::fmt(secs, 1) + " s, " + std::to_string(stays) + " stays, " + std::to_string(compared) + " labels compared, " +
                         std::to_string(mismatches) + " mismatches, " + std::to_string(cohort_diff) +
                         " cohort differences";
    if (!first.empty()) detail += "; first: " + first;
    return {pass, detail};
}

acceptance::Outcome bin_fidelity() {
    using namespace mlehr;
    const auto& cut = labels::default_cutoffs();
    const std::vector<double> creat = {1.2, 2.0, 3.5, 5.0};
    int bad = 0, probes = 0;
    for (size_t i = 0; i < creat.size(); ++i) {
        const int at = cut.bin("creatinine", creat[i]);
        const int below = cut.bin("creatinine", creat[i] - 1e-9);
        const int above = cut.bin("creatinine", creat[i] + 1e-9);
        probes += 3;
        bad += at != static_cast<int>(i);
        bad += below != static_cast<int>(i);
        bad += above != static_cast<int>(i) + 1;
    }
    for (auto [v, want] : std::vector<std::pair<double, int>>{{-1.0, 0}, {0.0, 0}, {2.5, 2}, {9.9, 4}, {1e9, 4}}) {
        ++probes;
        bad += cut.bin("creatinine", v) != want;
    }
    const std::map<std::string, int> counts = {{"creatinine", 5}, {"platelets", 5}, {"urine", 5}, {"wbc", 3},
                                               {"hemoglobin", 4}, {"bicarbonate", 3}, {"sodium", 3}};
    int bad_counts = 0;
    for (const auto& [a, n] : counts) bad_counts += cut.n_bins(a) != n;
    return {bad == 0 && bad_counts == 0, std::to_string(probes) + " boundary probes, " + std::to_string(bad) +
                                             " wrong; " + std::to_string(bad_counts) + " analytes with wrong bin count"};
}

acceptance::Register ac1(1, "label oracle equivalence", label_oracle, 60);
acceptance::Register ac2(2, "bin table fidelity", bin_fidelity);

}  // namespace
