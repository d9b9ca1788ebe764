#include "mlehr/util/fs.hpp"

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mlehr/error.hpp"

#ifndef MLEHR_ASSET_DIR
#define MLEHR_ASSET_DIR "assets"
#endif

namespace mlehr::util {

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("IoError", "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void atomic_write(const std::filesystem::path& path, std::string_view content) {
    static std::atomic<unsigned> counter{0};
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp" + std::to_string(counter.fetch_add(1));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail("IoError", "cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) fail("IoError", "short write " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void ensure_dir(const std::filesystem::path& dir) { std::filesystem::create_directories(dir); }

std::filesystem::path asset_dir() {
    if (const char* env = std::getenv("MLEHR_ASSETS"); env && *env) return env;
    return MLEHR_ASSET_DIR;
}

}  // namespace mlehr::util
