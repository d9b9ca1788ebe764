#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "mlehr/core/types.hpp"

namespace mlehr::lingua {

// Lower-cases ASCII and the Latin-1 supplement letters (Ä -> ä, ...).
std::string lower_utf8(std::string_view s);
// UTF-8 characters of s; invalid bytes become single-byte pieces.
std::vector<std::string> utf8_chars(std::string_view s);
// Only ASCII letters and Latin-1 supplement letters.
bool is_alphabetic(std::string_view token);

struct Lexicon {
    Language language = Language::en;
    std::unordered_set<std::string> words;
    std::string source;

    bool contains(std::string_view w) const { return words.count(std::string(w)) > 0; }
};

// One word per line; blank lines ignored. Throws InvalidLexicon on empty input
// or entries containing whitespace.
Lexicon parse_lexicon(const std::string& text, Language language, const std::string& source);
Lexicon load_lexicon(const std::filesystem::path& path, Language language);

// Index 0 en, 1 nl, 2 de.
using LexiconSet = std::array<Lexicon, 3>;
LexiconSet load_lexicons(const std::filesystem::path& dir);
const LexiconSet& bundled_lexicons();

constexpr size_t language_index(Language l) { return static_cast<size_t>(l); }
constexpr Language language_at(size_t i) { return static_cast<Language>(i); }

// Multinomial naive Bayes over character n-grams of "^word$".
class NgramClassifier {
   public:
    NgramClassifier() = default;
    static NgramClassifier train(const LexiconSet& lexicons, int min_n = 2, int max_n = 4, double alpha = 1.0);

    // Posterior over en, nl, de with a uniform prior over the allowed languages;
    // disallowed languages get 0.
    std::array<double, 3> posterior(std::string_view word, std::array<bool, 3> allowed = {true, true, true}) const;

   private:
    std::vector<std::string> ngrams(std::string_view word) const;

    int min_n_ = 2, max_n_ = 4;
    double alpha_ = 1.0;
    std::unordered_map<std::string, std::array<double, 3>> counts_;
    std::array<double, 3> totals_{};
};

enum class Stage { skipped, lexicon, classifier, service, none };
std::string_view to_string(Stage s);

struct TokenSpan {
    std::string text;
    Language language = Language::undetected;
    double confidence = 0.0;
    std::optional<std::string> translation;
    Stage stage = Stage::none;
};

// Language vote for tokens the first two stages leave open.
class LanguageVoter {
   public:
    virtual ~LanguageVoter() = default;
    // nullopt when the voter cannot decide.
    virtual std::optional<Language> vote(const std::string& token, const std::string& context) = 0;
};

struct CascadeOptions {
    double theta = 0.8;
    size_t classifier_min_length = 5;  // in characters
};

// Tokens that carry no natural language: protected tokens, anything with a
// digit, anything without a letter.
bool is_skipped_token(std::string_view token);

class LanguageIdentifier {
   public:
    explicit LanguageIdentifier(LexiconSet lexicons, CascadeOptions options = {});
    static const LanguageIdentifier& bundled();

    void set_voter(LanguageVoter* voter) { voter_ = voter; }
    const CascadeOptions& options() const { return options_; }
    const LexiconSet& lexicons() const { return lexicons_; }

    // `document_language` resolves words found in several lexicons when it is
    // one of them; undetected means no preference.
    TokenSpan identify(std::string_view token, Language document_language = Language::undetected,
                       std::string_view context = {}) const;
    std::vector<TokenSpan> identify_text(std::string_view text, Language document_language = Language::undetected) const;

   private:
    LexiconSet lexicons_;
    NgramClassifier classifier_;
    CascadeOptions options_;
    LanguageVoter* voter_ = nullptr;
};

}  // namespace mlehr::lingua
