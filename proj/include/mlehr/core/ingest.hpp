#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mlehr/core/manifest.hpp"
#include "mlehr/core/types.hpp"

namespace mlehr::core {

struct IngestOptions {
    // Events earlier than admission by more than this many minutes raise ClockSkew.
    double clock_skew_slack_minutes = 0.0;
};

struct IngestReport {
    size_t rows_read = 0;
    size_t events = 0;
    size_t dropped_bad_timestamp = 0;
    size_t dropped_unknown_stay = 0;
    size_t dropped_empty = 0;
};

struct SiteData {
    SiteManifest manifest;
    std::vector<ICUStay> stays;  // ordered by (patient_id, stay_id)
    IngestReport report;
};

// Numeric minutes, or an ISO-like "YYYY-MM-DD[ T]HH:MM[:SS]" converted to
// minutes since 1970-01-01.
std::optional<double> parse_timestamp_minutes(std::string_view text);

// Cells that parse as finite numbers become numeric feature values; empty
// cells are omitted.
FeatureValue parse_cell(std::string_view cell);

// Loads the stays table and every event table, merging events per stay in
// (timestamp, table name, feature content, row index) order. Rows with an
// unparseable timestamp are dropped and counted.
SiteData ingest_site(const SiteManifest& manifest, const IngestOptions& options = {});

}  // namespace mlehr::core
