#pragma once

#include <filesystem>
#include <string>

#include "mlehr/core/ingest.hpp"

namespace mlehr::core {

// Canonical event store, one binary file per site:
//
//   "MLEHRSTR" u32 version
//   str manifest_json
//   u64 rows_read, events, dropped_bad_timestamp, dropped_unknown_stay, dropped_empty
//   u64 n_stays, then per stay:
//     str site_id, patient_id, stay_id; f64 age, admit, discharge
//     u8 has_death [f64 death]; u8 has_weight [f64 weight]; u8 dialysis
//     u64 n_events, then per event:
//       str event_type, source_table; f64 timestamp; u64 n_features
//       per feature: str name; u8 kind (0 text, 1 number); str | f64
//
// Integers and doubles are little-endian; strings are u64 length + bytes.
// Doubles are stored bit-exact, so save/load round-trips losslessly.
std::string encode_store(const SiteData& data);
SiteData decode_store(const std::string& bytes, const std::string& source = "<store>");

void save_store(const SiteData& data, const std::filesystem::path& path);
SiteData load_store(const std::filesystem::path& path);

}  // namespace mlehr::core
