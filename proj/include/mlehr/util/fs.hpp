#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace mlehr::util {

std::string read_text(const std::filesystem::path& path);

// Writes to a sibling temp file and renames over the target, so readers never
// observe a partially written file.
void atomic_write(const std::filesystem::path& path, std::string_view content);

void ensure_dir(const std::filesystem::path& dir);

// Directory holding lexicons, cutoffs and prompts. MLEHR_ASSETS overrides the
// compiled-in default.
std::filesystem::path asset_dir();

}  // namespace mlehr::util
