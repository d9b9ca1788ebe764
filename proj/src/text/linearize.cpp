#include "mlehr/text/linearize.hpp"

#include <charconv>
#include <cmath>
#include <map>
#include <unordered_set>

#include "mlehr/error.hpp"
#include "mlehr/util/strings.hpp"

namespace mlehr::text {

std::vector<std::string> digit_place_encode(double value) {
    if (!std::isfinite(value)) fail("NonFinite", "digit_place_encode");
    char buf[400];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::fixed, 4);
    if (ec != std::errc()) fail("NonFinite", "digit_place_encode overflow");
    std::string_view s(buf, static_cast<size_t>(end - buf));
    bool negative = false;
    if (!s.empty() && s.front() == '-') {
        negative = true;
        s.remove_prefix(1);
    }
    auto dot = s.find('.');
    std::string_view ip = s.substr(0, dot);
    std::string_view fp = dot == std::string_view::npos ? std::string_view{} : s.substr(dot + 1);
    while (!fp.empty() && fp.back() == '0') fp.remove_suffix(1);

    std::vector<std::string> out;
    bool nonzero = fp.size() > 0 || ip.find_first_not_of('0') != std::string_view::npos;
    if (negative && nonzero) out.emplace_back(kNegative);
    for (size_t i = 0; i < ip.size(); ++i) {
        out.push_back(std::string(1, ip[i]) + "@" + std::to_string(static_cast<int>(ip.size() - 1 - i)));
    }
    for (size_t i = 0; i < fp.size(); ++i) out.push_back(std::string(1, fp[i]) + "@-" + std::to_string(i + 1));
    return out;
}

bool is_digit_place_token(std::string_view t) {
    if (t.size() < 3 || t[0] < '0' || t[0] > '9' || t[1] != '@') return false;
    auto rest = t.substr(2);
    if (!rest.empty() && rest[0] == '-') rest.remove_prefix(1);
    return !rest.empty() && util::is_all_digits(rest);
}

bool is_protected_token(std::string_view t) { return t == kSeparator || t == kNegative || is_digit_place_token(t); }

std::vector<std::string> protected_vocabulary(int max_place, int min_place) {
    std::vector<std::string> out = {std::string(kSeparator), std::string(kNegative)};
    for (int p = max_place; p >= min_place; --p) {
        for (char d = '0'; d <= '9'; ++d) out.push_back(std::string(1, d) + "@" + std::to_string(p));
    }
    return out;
}

double digit_place_decode(const std::vector<std::string>& tokens) {
    double sign = 1.0;
    long double total = 0.0;
    for (const auto& t : tokens) {
        if (t == kNegative) {
            sign = -1.0;
            continue;
        }
        if (!is_digit_place_token(t)) fail("InvalidToken", t);
        auto p = util::parse_int(std::string_view(t).substr(2));
        total += static_cast<long double>(t[0] - '0') * std::pow(10.0L, static_cast<long double>(*p));
    }
    return sign * static_cast<double>(total);
}

std::set<ColumnKey> identifier_columns(const std::vector<ICUStay>& stays, const core::SiteManifest& manifest) {
    struct ColumnStats {
        size_t count = 0;
        bool all_integer = true;
        std::unordered_set<std::string> values;
    };
    std::map<std::string, size_t> rows;
    std::map<ColumnKey, ColumnStats> stats;
    for (const auto& s : stays) {
        for (const auto& e : s.events) {
            ++rows[e.source_table];
            for (const auto& f : e.features) {
                auto& st = stats[{e.source_table, f.name}];
                ++st.count;
                if (!st.all_integer) continue;
                if (!f.is_number() || std::floor(f.number()) != f.number()) {
                    st.all_integer = false;
                    st.values.clear();
                    continue;
                }
                st.values.insert(util::format_double(f.number()));
            }
        }
    }
    std::set<ColumnKey> out;
    for (const auto& [key, st] : stats) {
        size_t n = rows[key.first];
        if (n >= 2 && st.all_integer && st.count == n && st.values.size() == n) out.insert(key);
    }
    for (const auto& t : manifest.tables) {
        for (const auto& c : t.excluded_columns) out.insert({t.name, c});
    }
    return out;
}

size_t drop_identifier_columns(std::vector<ICUStay>& stays, const std::set<ColumnKey>& columns) {
    size_t dropped = 0;
    for (auto& s : stays) {
        std::vector<MedicalEvent> kept;
        kept.reserve(s.events.size());
        for (auto& e : s.events) {
            std::erase_if(e.features, [&](const Feature& f) { return columns.count({e.source_table, f.name}) > 0; });
            if (e.features.empty())
                ++dropped;
            else
                kept.push_back(std::move(e));
        }
        s.events = std::move(kept);
    }
    return dropped;
}

LinearizedEvent linearize_event(const MedicalEvent& event) {
    if (event.features.empty()) fail("EmptyEvent", event.event_type);
    std::string text = util::lower_ascii(util::normalize_ws(event.event_type));
    if (text.empty()) fail("EmptyEvent", "blank event type");
    for (const auto& f : event.features) {
        text += " | ";
        text += util::lower_ascii(util::normalize_ws(f.name));
        if (f.is_number()) {
            for (const auto& tok : digit_place_encode(f.number())) {
                text += ' ';
                text += tok;
            }
        } else {
            auto v = util::lower_ascii(util::normalize_ws(f.text()));
            if (!v.empty()) {
                text += ' ';
                text += v;
            }
        }
    }
    return LinearizedEvent{std::move(text), event.timestamp, event.event_type};
}

std::vector<CorpusRecord> linearize_site(const core::SiteData& site, const LinearizeOptions& options) {
    auto stays = site.stays;
    drop_identifier_columns(stays, identifier_columns(stays, site.manifest));
    std::vector<CorpusRecord> out;
    for (const auto& s : stays) {
        for (const auto& e : s.events) {
            if (options.window_only && (e.timestamp < 0 || e.timestamp > options.window_end_minutes)) continue;
            out.push_back(CorpusRecord{s.stay_id, e.timestamp, linearize_event(e).text});
        }
    }
    return out;
}

std::string corpus_tsv(const std::vector<CorpusRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        out += r.stay_id;
        out += '\t';
        out += util::format_double(r.timestamp);
        out += '\t';
        out += r.text;
        out += '\n';
    }
    return out;
}

std::vector<CorpusRecord> parse_corpus_tsv(const std::string& text, const std::string& source) {
    std::vector<CorpusRecord> out;
    size_t line_no = 0, pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        std::string_view line(text.data() + pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        auto t1 = line.find('\t');
        auto t2 = t1 == std::string_view::npos ? t1 : line.find('\t', t1 + 1);
        if (t2 == std::string_view::npos) fail("CsvParse", source + ":" + std::to_string(line_no) + " expected 3 fields");
        auto ts = util::parse_double(line.substr(t1 + 1, t2 - t1 - 1));
        if (!ts) fail("CsvParse", source + ":" + std::to_string(line_no) + " bad timestamp");
        out.push_back(CorpusRecord{std::string(line.substr(0, t1)), *ts, std::string(line.substr(t2 + 1))});
    }
    return out;
}

}  // namespace mlehr::text
