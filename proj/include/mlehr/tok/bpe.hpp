#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace mlehr::tok {

// Byte-level BPE. Merges never cross spaces; each vocabulary entry ("type")
// owns two ids: 2*type for a piece that starts a word glued to the previous
// text and 2*type + 1 for one preceded by a single space.
class Tokenizer {
   public:
    static constexpr std::int32_t kPadId = 0;
    static constexpr std::int32_t kClsId = 2;
    static constexpr int kVersion = 1;

    Tokenizer();
    Tokenizer(const Tokenizer& other);
    Tokenizer& operator=(const Tokenizer& other);
    Tokenizer(Tokenizer&&) noexcept;
    Tokenizer& operator=(Tokenizer&&) noexcept;
    ~Tokenizer();

    // `vocab_size` counts types: 2 specials + 256 bytes + protected + merges.
    // Throws CorpusEmpty, InvalidConfig.
    static Tokenizer train(const std::vector<std::string>& lines, size_t vocab_size,
                           std::vector<std::string> protected_tokens);

    std::vector<std::int32_t> encode(std::string_view text) const;
    std::string decode(const std::vector<std::int32_t>& ids) const;

    size_t type_count() const { return types_.size(); }
    size_t id_count() const { return 2 * types_.size(); }
    size_t vocab_size_target() const { return vocab_size_; }
    const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }
    const std::vector<std::string>& protected_tokens() const { return protected_; }
    const std::string& type_string(size_t type) const { return types_.at(type); }

    std::string to_json() const;
    static Tokenizer from_json(const std::string& text);
    void save(const std::filesystem::path& path) const;
    static Tokenizer load(const std::filesystem::path& path);

    bool operator==(const Tokenizer& o) const {
        return vocab_size_ == o.vocab_size_ && merges_ == o.merges_ && protected_ == o.protected_;
    }

   private:
    void rebuild();
    const std::vector<std::int32_t>& word_types(const std::string& word) const;

    size_t vocab_size_ = 0;
    std::vector<std::string> protected_;
    std::vector<std::pair<std::string, std::string>> merges_;

    std::vector<std::string> types_;
    std::unordered_map<std::string, std::int32_t> type_of_;
    std::unordered_map<std::string, std::int32_t> protected_type_;
    std::map<std::pair<std::int32_t, std::int32_t>, std::pair<std::int32_t, std::int32_t>> merge_rank_;  // -> (rank, merged type)

    mutable std::unique_ptr<std::shared_mutex> cache_mutex_;
    mutable std::unordered_map<std::string, std::vector<std::int32_t>> cache_;
};

// GPT-2 style reversible byte <-> printable unicode mapping used in vocab files.
std::string bytes_to_unicode(std::string_view bytes);
std::string unicode_to_bytes(std::string_view text);

}  // namespace mlehr::tok
