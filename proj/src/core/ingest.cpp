#include "mlehr/core/ingest.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <unordered_map>

#include "mlehr/error.hpp"
#include "mlehr/util/civil.hpp"
#include "mlehr/util/csv.hpp"
#include "mlehr/util/strings.hpp"

namespace mlehr::core {

namespace {

int compare_value(const FeatureValue& a, const FeatureValue& b) {
    if (a.index() != b.index()) return a.index() < b.index() ? -1 : 1;
    if (std::holds_alternative<double>(a)) {
        double x = std::get<double>(a), y = std::get<double>(b);
        return x < y ? -1 : (x > y ? 1 : 0);
    }
    return std::get<std::string>(a).compare(std::get<std::string>(b));
}

int compare_features(const std::vector<Feature>& a, const std::vector<Feature>& b) {
    size_t n = std::min(a.size(), b.size());
    for (size_t i = 0; i < n; ++i) {
        if (int c = a[i].name.compare(b[i].name)) return c;
        if (int c = compare_value(a[i].value, b[i].value)) return c;
    }
    return a.size() < b.size() ? -1 : (a.size() > b.size() ? 1 : 0);
}

struct PendingEvent {
    MedicalEvent event;
    size_t row_index;
};

bool parse_flag(std::string_view s) {
    auto t = util::lower_ascii(util::trim(s));
    return t == "1" || t == "true" || t == "yes" || t == "y" || t == "t";
}

using StayKey = std::pair<std::string, std::string>;

}  // namespace

std::optional<double> parse_timestamp_minutes(std::string_view text) {
    auto t = util::trim(text);
    if (auto v = util::parse_double(t)) return v;
    // YYYY-MM-DD[ T]HH:MM[:SS]
    if (t.size() < 16 || t[4] != '-' || t[7] != '-' || (t[10] != ' ' && t[10] != 'T') || t[13] != ':')
        return std::nullopt;
    auto num = [&](size_t pos, size_t len) { return util::parse_int(t.substr(pos, len)); };
    auto y = num(0, 4), mo = num(5, 2), d = num(8, 2), h = num(11, 2), mi = num(14, 2);
    if (!y || !mo || !d || !h || !mi) return std::nullopt;
    if (*mo < 1 || *mo > 12 || *d < 1 || *d > 31 || *h > 23 || *mi > 59) return std::nullopt;
    double seconds = 0.0;
    if (t.size() > 16) {
        if (t[16] != ':') return std::nullopt;
        auto s = util::parse_double(t.substr(17));
        if (!s || *s < 0 || *s >= 61) return std::nullopt;
        seconds = *s;
    }
    long long days = util::days_from_civil(*y, static_cast<unsigned>(*mo), static_cast<unsigned>(*d));
    return static_cast<double>(days) * 1440.0 + static_cast<double>(*h) * 60.0 + static_cast<double>(*mi) +
           seconds / 60.0;
}

FeatureValue parse_cell(std::string_view cell) {
    auto t = util::trim(cell);
    if (auto v = util::parse_double(t)) return *v;
    return std::string(t);
}

SiteData ingest_site(const SiteManifest& manifest, const IngestOptions& options) {
    SiteData out;
    out.manifest = manifest;

    // Stays.
    const auto& ss = manifest.stays;
    auto stays_path = manifest.resolve(ss.file_path);
    auto stays_csv = util::read_csv(stays_path);
    auto col = [&](const util::CsvTable& t, const std::string& name, const std::string& owner) -> std::optional<size_t> {
        if (name.empty()) return std::nullopt;
        auto c = t.column(name);
        if (!c) fail("MissingColumn", owner);
        return c;
    };
    auto c_pat = *col(stays_csv, ss.patient_column, "stays");
    auto c_stay = *col(stays_csv, ss.stay_column, "stays");
    auto c_admit = *col(stays_csv, ss.admit_column, "stays");
    auto c_dis = *col(stays_csv, ss.discharge_column, "stays");
    auto c_death = *col(stays_csv, ss.death_column, "stays");
    auto c_age = *col(stays_csv, ss.age_column, "stays");
    auto c_weight = col(stays_csv, ss.weight_column, "stays");
    auto c_dial = col(stays_csv, ss.dialysis_column, "stays");

    std::map<StayKey, ICUStay> stays;
    for (size_t r = 0; r < stays_csv.rows.size(); ++r) {
        const auto& row = stays_csv.rows[r];
        std::string where = stays_path.string() + ":" + std::to_string(r + 2);
        ICUStay s;
        s.site_id = manifest.site_id;
        s.patient_id = std::string(util::trim(row[c_pat]));
        s.stay_id = std::string(util::trim(row[c_stay]));
        auto admit = parse_timestamp_minutes(row[c_admit]);
        auto dis = parse_timestamp_minutes(row[c_dis]);
        auto age = util::parse_double(row[c_age]);
        if (s.patient_id.empty() || s.stay_id.empty() || !admit || !dis || !age) fail("InvalidStay", where);
        s.admit_time = *admit;
        s.discharge_time = *dis;
        s.age_years = *age;
        if (!(s.discharge_time > s.admit_time)) fail("InvalidStay", where + " discharge before admission");
        if (!util::trim(row[c_death]).empty()) {
            auto d = parse_timestamp_minutes(row[c_death]);
            if (!d) fail("InvalidStay", where + " death time");
            if (*d < s.admit_time) fail("InvalidStay", where + " death before admission");
            s.death_time = *d;
        }
        if (c_weight) {
            if (auto w = util::parse_double(row[*c_weight]); w && *w > 0) s.weight_kg = *w;
        }
        if (c_dial) s.dialysis = parse_flag(row[*c_dial]);
        StayKey key{s.patient_id, s.stay_id};
        if (!stays.emplace(key, std::move(s)).second) fail("DuplicateStay", where);
    }

    std::map<StayKey, std::vector<PendingEvent>> pending;
    size_t global_row = 0;
    for (const auto& spec : manifest.tables) {
        auto path = manifest.resolve(spec.file_path);
        auto csv = util::read_csv(path);
        auto c_ts = *col(csv, spec.timestamp_column, spec.name);
        auto c_p = *col(csv, spec.patient_column, spec.name);
        auto c_s = *col(csv, spec.stay_column, spec.name);
        std::vector<std::pair<std::string, size_t>> feature_cols;
        if (!spec.columns.empty()) {
            for (const auto& name : spec.columns) feature_cols.emplace_back(name, *col(csv, name, spec.name));
        } else {
            for (size_t i = 0; i < csv.header.size(); ++i) {
                if (i == c_ts || i == c_p || i == c_s) continue;
                feature_cols.emplace_back(csv.header[i], i);
            }
        }
        for (size_t r = 0; r < csv.rows.size(); ++r, ++global_row) {
            const auto& row = csv.rows[r];
            ++out.report.rows_read;
            StayKey key{std::string(util::trim(row[c_p])), std::string(util::trim(row[c_s]))};
            auto sit = stays.find(key);
            if (sit == stays.end()) {
                ++out.report.dropped_unknown_stay;
                continue;
            }
            auto ts = parse_timestamp_minutes(row[c_ts]);
            if (!ts) {
                ++out.report.dropped_bad_timestamp;
                continue;
            }
            double rel = *ts - sit->second.admit_time;
            if (rel < -options.clock_skew_slack_minutes) {
                fail("ClockSkew", path.string() + ":" + std::to_string(r + 2) + " event " +
                                      util::format_double(-rel) + " min before admission");
            }
            MedicalEvent ev;
            ev.event_type = spec.event_type;
            ev.source_table = spec.name;
            ev.timestamp = rel;
            for (const auto& [name, idx] : feature_cols) {
                if (util::trim(row[idx]).empty()) continue;
                ev.features.push_back(Feature{name, parse_cell(row[idx])});
            }
            if (ev.features.empty()) {
                ++out.report.dropped_empty;
                continue;
            }
            pending[key].push_back(PendingEvent{std::move(ev), global_row});
        }
    }

    for (auto& [key, stay] : stays) {
        auto it = pending.find(key);
        if (it != pending.end()) {
            auto& evs = it->second;
            std::sort(evs.begin(), evs.end(), [](const PendingEvent& a, const PendingEvent& b) {
                if (a.event.timestamp != b.event.timestamp) return a.event.timestamp < b.event.timestamp;
                if (int c = a.event.source_table.compare(b.event.source_table)) return c < 0;
                if (int c = compare_features(a.event.features, b.event.features)) return c < 0;
                return a.row_index < b.row_index;
            });
            stay.events.reserve(evs.size());
            for (auto& pe : evs) stay.events.push_back(std::move(pe.event));
        }
        out.report.events += stay.events.size();
        out.stays.push_back(std::move(stay));
    }
    return out;
}

}  // namespace mlehr::core
