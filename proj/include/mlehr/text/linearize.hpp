#pragma once

#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mlehr/core/ingest.hpp"
#include "mlehr/core/types.hpp"

namespace mlehr::text {

inline constexpr std::string_view kSeparator = "|";
inline constexpr std::string_view kNegative = "NEG";

// 98.6 -> {"9@1", "8@0", "6@-1"}. At most four fractional digits, rounded
// half-to-even on the exact binary value; trailing fractional zeros dropped.
std::vector<std::string> digit_place_encode(double value);
double digit_place_decode(const std::vector<std::string>& tokens);
bool is_digit_place_token(std::string_view token);
// Separator, NEG and digit-place tokens.
bool is_protected_token(std::string_view token);
// Every token that can appear as a digit-place token, plus "|" and "NEG".
std::vector<std::string> protected_vocabulary(int max_place = 9, int min_place = -4);

using ColumnKey = std::pair<std::string, std::string>;  // (source_table, feature name)

// Columns whose every value is an integer, present on every row of their
// table and pairwise distinct, plus manifest excluded_columns.
std::set<ColumnKey> identifier_columns(const std::vector<ICUStay>& stays, const core::SiteManifest& manifest);

// Removes identifier columns; events left without features are removed and
// counted in the return value.
size_t drop_identifier_columns(std::vector<ICUStay>& stays, const std::set<ColumnKey>& columns);

struct LinearizedEvent {
    std::string text;
    double timestamp = 0.0;
    std::string event_type;
};

// "lab | item natrium | value 1@2 3@1 9@0 | unit mmol/l". Throws EmptyEvent.
LinearizedEvent linearize_event(const MedicalEvent& event);

struct CorpusRecord {
    std::string stay_id;
    double timestamp = 0.0;
    std::string text;
    bool operator==(const CorpusRecord&) const = default;
};

struct LinearizeOptions {
    bool window_only = true;
    double window_end_minutes = 720.0;
};

// Identifier removal plus linearization of every (window) event, in stay and
// event order.
std::vector<CorpusRecord> linearize_site(const core::SiteData& site, const LinearizeOptions& options = {});

// One record per line: stay_id \t timestamp \t text.
std::string corpus_tsv(const std::vector<CorpusRecord>& records);
std::vector<CorpusRecord> parse_corpus_tsv(const std::string& text, const std::string& source = "<corpus>");

}  // namespace mlehr::text
