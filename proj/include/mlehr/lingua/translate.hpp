#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "mlehr/lingua/identify.hpp"
#include "mlehr/text/linearize.hpp"

namespace mlehr::lingua {

// Source -> English word map per language. Entries are single lower-cased
// tokens; source == english is allowed for terms spelled the same.
class BilingualDictionary {
   public:
    void add(Language lang, const std::string& source, const std::string& english);
    std::optional<std::string> lookup(Language lang, std::string_view source) const;
    size_t size() const;
    bool empty() const { return size() == 0; }
    const std::map<Language, std::map<std::string, std::string>>& entries() const { return entries_; }

    // Lines "source<TAB>english" (language taken from `default_language`) or
    // "lang<TAB>source<TAB>english". Throws InvalidDictionary.
    static BilingualDictionary parse_tsv(const std::string& text, const std::string& source_name,
                                         std::optional<Language> default_language = std::nullopt);
    static BilingualDictionary load(const std::filesystem::path& path,
                                    std::optional<Language> default_language = std::nullopt);
    std::string to_tsv() const;

    // Keeps round(fraction * n) entries per language, chosen by `seed`.
    BilingualDictionary sample(double fraction, std::uint64_t seed) const;

   private:
    std::map<Language, std::map<std::string, std::string>> entries_;
};

// Ordered lookup: each layer in turn, then (when bridging) the same token
// under the other non-English language.
class DictionaryStack {
   public:
    DictionaryStack() = default;
    explicit DictionaryStack(std::vector<BilingualDictionary> layers, bool bridge = true)
        : layers_(std::move(layers)), bridge_(bridge) {}
    // Bundled medical dictionary followed by the general one.
    static DictionaryStack bundled();

    std::optional<std::string> lookup(Language lang, std::string_view token) const;
    const std::vector<BilingualDictionary>& layers() const { return layers_; }

   private:
    std::vector<BilingualDictionary> layers_;
    bool bridge_ = true;
};

// Dictionary lookup of an identified span; translation stays absent when the
// token is not nl/de or has no entry.
TokenSpan translate_token_dict(TokenSpan span, const DictionaryStack& dict);

// Prompt completion backend. Implementations throw
// Error("ServiceUnavailable", ...) when the backend cannot be reached.
class CompletionClient {
   public:
    virtual ~CompletionClient() = default;
    virtual std::string complete(const std::string& prompt) = 0;
};

// POSTs {"prompt": ...} as JSON with a bearer token. The reply may carry the
// text as "text", "completion", "output", choices[0].text or
// choices[0].message.content.
class HttpCompletionClient : public CompletionClient {
   public:
    HttpCompletionClient(std::string endpoint, std::string token, int timeout_seconds = 30);
    // Reads TRANSLATE_ENDPOINT and TRANSLATE_TOKEN; throws ConfigError naming
    // the missing variable.
    static std::unique_ptr<HttpCompletionClient> from_environment();
    std::string complete(const std::string& prompt) override;

   private:
    std::string scheme_host_;
    std::string path_;
    std::string token_;
    int timeout_;
};

class MockCompletionClient : public CompletionClient {
   public:
    explicit MockCompletionClient(std::function<std::string(const std::string&)> respond)
        : respond_(std::move(respond)) {}
    // Answers translation prompts from a dictionary, echoing unknown tokens.
    static std::unique_ptr<MockCompletionClient> from_dictionary(BilingualDictionary dict, Language lang);
    std::string complete(const std::string& prompt) override;
    size_t calls() const { return calls_.load(); }

   private:
    std::function<std::string(const std::string&)> respond_;
    std::atomic<size_t> calls_{0};
};

const std::string& translation_prompt_template();
std::string translation_prompt(const std::string& token, const std::string& context);
// Recovers the token from a prompt built by translation_prompt; empty if absent.
std::string prompt_token(const std::string& prompt);
// A single whitespace-free run of ASCII letters and hyphens with at least one
// letter, lower-cased; nullopt otherwise.
std::optional<std::string> accept_translation(const std::string& response);

struct CacheEntry {
    bool rejected = false;
    std::string english;
    bool operator==(const CacheEntry&) const = default;
};

// Keyed by (token, language, context hash); optional JSON-lines backing file
// that is appended to on every insert.
class TranslationCache {
   public:
    TranslationCache() = default;
    explicit TranslationCache(std::filesystem::path file);

    std::optional<CacheEntry> find(const std::string& token, Language lang, std::uint64_t context_hash) const;
    // First insert wins; later inserts for the same key are ignored.
    void insert(const std::string& token, Language lang, std::uint64_t context_hash, const CacheEntry& entry);
    size_t size() const;

   private:
    using Key = std::tuple<std::string, Language, std::uint64_t>;
    mutable std::shared_mutex mutex_;
    std::map<Key, CacheEntry> entries_;
    std::optional<std::filesystem::path> file_;
};

struct ServiceStats {
    std::atomic<size_t> calls{0}, cache_hits{0}, accepted{0}, rejected{0};
};

class ServiceTranslator {
   public:
    ServiceTranslator(CompletionClient& client, TranslationCache& cache) : client_(client), cache_(cache) {}
    // Accepted English term, or nullopt when the reply was rejected (cached as
    // such). Propagates ServiceUnavailable.
    std::optional<std::string> translate(const std::string& token, Language lang, const std::string& context);
    const ServiceStats& stats() const { return stats_; }

   private:
    CompletionClient& client_;
    TranslationCache& cache_;
    ServiceStats stats_;
};

// Service-backed language vote used as the third identification stage.
class ServiceLanguageVoter : public LanguageVoter {
   public:
    explicit ServiceLanguageVoter(CompletionClient& client) : client_(client) {}
    std::optional<Language> vote(const std::string& token, const std::string& context) override;

   private:
    CompletionClient& client_;
};

enum class AlignMode { none, dict, service };
AlignMode parse_align_mode(std::string_view s);
std::string_view to_string(AlignMode m);

struct AlignStats {
    size_t tokens = 0;        // all whitespace tokens
    size_t skipped = 0;       // protected, numeric, symbol tokens
    std::array<size_t, 4> by_language{};  // en, nl, de, undetected among the rest
    size_t translated = 0;    // nl/de tokens given a translation (identity included)
    size_t service_fallbacks = 0;

    size_t foreign() const { return by_language[1] + by_language[2]; }
    size_t residual_foreign() const { return foreign() - translated; }
    size_t words() const { return tokens - skipped; }
    // Shares of all tokens.
    double foreign_rate() const;
    double residual_rate() const;
    void merge(const AlignStats& o);
};

class Aligner {
   public:
    Aligner(const LanguageIdentifier& identifier, Language site_language, const DictionaryStack* dict = nullptr,
            ServiceTranslator* service = nullptr)
        : id_(identifier), site_language_(site_language), dict_(dict), service_(service) {}

    // Token-by-token substitution; token count and protected tokens are kept.
    std::string align(std::string_view text, AlignMode mode, AlignStats* stats = nullptr) const;

   private:
    const LanguageIdentifier& id_;
    Language site_language_;
    const DictionaryStack* dict_;
    ServiceTranslator* service_;
    mutable std::atomic<bool> service_down_{false};
};

// Aligns each record's text with up to `jobs` worker threads; output order and
// content do not depend on `jobs`.
std::vector<text::CorpusRecord> align_corpus(const std::vector<text::CorpusRecord>& records, const Aligner& aligner,
                                             AlignMode mode, size_t jobs = 1, AlignStats* stats = nullptr);

}  // namespace mlehr::lingua
