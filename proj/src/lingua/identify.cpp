#include "mlehr/lingua/identify.hpp"

#include <algorithm>
#include <cmath>

#include "mlehr/error.hpp"
#include "mlehr/text/linearize.hpp"
#include "mlehr/util/fs.hpp"
#include "mlehr/util/strings.hpp"

namespace mlehr::lingua {

namespace {

bool is_latin1_letter(unsigned char second) {
    // U+00C0..U+00FF minus the multiplication and division signs.
    return second >= 0x80 && second <= 0xBF && second != 0x97 && second != 0xB7;
}

}  // namespace

std::string lower_utf8(std::string_view s) {
    std::string out(s);
    for (size_t i = 0; i < out.size(); ++i) {
        auto c = static_cast<unsigned char>(out[i]);
        if (c >= 'A' && c <= 'Z') {
            out[i] = static_cast<char>(c - 'A' + 'a');
        } else if (c == 0xC3 && i + 1 < out.size()) {
            auto d = static_cast<unsigned char>(out[i + 1]);
            if (d >= 0x80 && d <= 0x9E && d != 0x97) out[i + 1] = static_cast<char>(d + 0x20);
            ++i;
        }
    }
    return out;
}

std::vector<std::string> utf8_chars(std::string_view s) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < s.size()) {
        auto c = static_cast<unsigned char>(s[i]);
        size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xE ? 3 : (c >> 3) == 0x1E ? 4 : 1;
        if (i + len > s.size()) len = 1;
        for (size_t k = 1; k < len; ++k) {
            if ((static_cast<unsigned char>(s[i + k]) & 0xC0) != 0x80) {
                len = 1;
                break;
            }
        }
        out.emplace_back(s.substr(i, len));
        i += len;
    }
    return out;
}

bool is_alphabetic(std::string_view token) {
    if (token.empty()) return false;
    for (size_t i = 0; i < token.size(); ++i) {
        auto c = static_cast<unsigned char>(token[i]);
        if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) continue;
        if (c == 0xC3 && i + 1 < token.size() && is_latin1_letter(static_cast<unsigned char>(token[i + 1]))) {
            ++i;
            continue;
        }
        return false;
    }
    return true;
}

bool is_skipped_token(std::string_view token) {
    if (text::is_protected_token(token)) return true;
    bool letter = false;
    for (size_t i = 0; i < token.size(); ++i) {
        auto c = static_cast<unsigned char>(token[i]);
        if (c >= '0' && c <= '9') return true;
        if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80) letter = true;
    }
    return !letter;
}

Lexicon parse_lexicon(const std::string& text, Language language, const std::string& source) {
    Lexicon lex;
    lex.language = language;
    lex.source = source;
    size_t line_no = 0;
    for (const auto& raw : util::split(text, '\n')) {
        ++line_no;
        auto line = util::trim(raw);
        if (line.empty()) continue;
        if (line.find_first_of(" \t") != std::string_view::npos)
            fail("InvalidLexicon", source + ":" + std::to_string(line_no) + ": entry contains whitespace");
        lex.words.insert(lower_utf8(line));
    }
    if (lex.words.empty()) fail("InvalidLexicon", source + ": empty lexicon");
    return lex;
}

Lexicon load_lexicon(const std::filesystem::path& path, Language language) {
    return parse_lexicon(util::read_text(path), language, path.string());
}

LexiconSet load_lexicons(const std::filesystem::path& dir) {
    return {load_lexicon(dir / "en.txt", Language::en), load_lexicon(dir / "nl.txt", Language::nl),
            load_lexicon(dir / "de.txt", Language::de)};
}

const LexiconSet& bundled_lexicons() {
    static const LexiconSet lex = load_lexicons(util::asset_dir() / "lexicons");
    return lex;
}

std::vector<std::string> NgramClassifier::ngrams(std::string_view word) const {
    auto chars = utf8_chars(word);
    chars.insert(chars.begin(), "^");
    chars.emplace_back("$");
    std::vector<std::string> out;
    for (int n = min_n_; n <= max_n_; ++n) {
        for (size_t i = 0; i + static_cast<size_t>(n) <= chars.size(); ++i) {
            std::string g;
            for (int k = 0; k < n; ++k) g += chars[i + static_cast<size_t>(k)];
            out.push_back(std::move(g));
        }
    }
    return out;
}

NgramClassifier NgramClassifier::train(const LexiconSet& lexicons, int min_n, int max_n, double alpha) {
    if (min_n < 1 || max_n < min_n) fail("InvalidConfig", "n-gram range");
    NgramClassifier c;
    c.min_n_ = min_n;
    c.max_n_ = max_n;
    c.alpha_ = alpha;
    for (size_t l = 0; l < 3; ++l) {
        std::vector<std::string> words(lexicons[l].words.begin(), lexicons[l].words.end());
        std::sort(words.begin(), words.end());
        for (const auto& w : words) {
            for (const auto& g : c.ngrams(w)) {
                c.counts_[g][l] += 1.0;
                c.totals_[l] += 1.0;
            }
        }
    }
    return c;
}

std::array<double, 3> NgramClassifier::posterior(std::string_view word, std::array<bool, 3> allowed) const {
    std::array<double, 3> logp{};
    const double v = static_cast<double>(counts_.size());
    for (const auto& g : ngrams(word)) {
        auto it = counts_.find(g);
        for (size_t l = 0; l < 3; ++l) {
            double c = it == counts_.end() ? 0.0 : it->second[l];
            logp[l] += std::log((c + alpha_) / (totals_[l] + alpha_ * v));
        }
    }
    double best = -INFINITY;
    for (size_t l = 0; l < 3; ++l) {
        if (allowed[l]) best = std::max(best, logp[l]);
    }
    std::array<double, 3> post{};
    double z = 0.0;
    for (size_t l = 0; l < 3; ++l) {
        if (!allowed[l]) continue;
        post[l] = std::exp(logp[l] - best);
        z += post[l];
    }
    if (z > 0) {
        for (auto& p : post) p /= z;
    }
    return post;
}

std::string_view to_string(Stage s) {
    switch (s) {
        case Stage::skipped: return "skipped";
        case Stage::lexicon: return "lexicon";
        case Stage::classifier: return "classifier";
        case Stage::service: return "service";
        case Stage::none: return "none";
    }
    return "none";
}

LanguageIdentifier::LanguageIdentifier(LexiconSet lexicons, CascadeOptions options)
    : lexicons_(std::move(lexicons)), classifier_(NgramClassifier::train(lexicons_)), options_(options) {
    if (!(options_.theta > 0.0 && options_.theta <= 1.0)) fail("InvalidConfig", "theta must be in (0,1]");
}

const LanguageIdentifier& LanguageIdentifier::bundled() {
    static const LanguageIdentifier id(bundled_lexicons());
    return id;
}

TokenSpan LanguageIdentifier::identify(std::string_view token, Language document_language, std::string_view context) const {
    TokenSpan span;
    span.text = std::string(token);
    if (is_skipped_token(token)) {
        span.stage = Stage::skipped;
        return span;
    }
    const std::string word = lower_utf8(token);

    std::array<bool, 3> hits{};
    int n_hits = 0;
    for (size_t l = 0; l < 3; ++l) {
        hits[l] = lexicons_[l].contains(word);
        n_hits += hits[l];
    }
    auto accept = [&](Language lang, double conf, Stage stage) {
        span.language = lang;
        span.confidence = conf;
        span.stage = stage;
        return span;
    };
    if (n_hits == 1) {
        for (size_t l = 0; l < 3; ++l) {
            if (hits[l]) return accept(language_at(l), 1.0, Stage::lexicon);
        }
    }
    if (n_hits > 1 && document_language != Language::undetected && hits[language_index(document_language)])
        return accept(document_language, 1.0, Stage::lexicon);

    const bool classifiable = is_alphabetic(word) && utf8_chars(word).size() >= options_.classifier_min_length;
    if (n_hits > 1 || classifiable) {
        auto post = classifier_.posterior(word, n_hits > 1 ? hits : std::array<bool, 3>{true, true, true});
        size_t best = static_cast<size_t>(std::max_element(post.begin(), post.end()) - post.begin());
        if (post[best] >= options_.theta) return accept(language_at(best), post[best], Stage::classifier);
    }

    if (voter_) {
        if (auto v = voter_->vote(word, std::string(context)); v && *v != Language::undetected)
            return accept(*v, 1.0, Stage::service);
    }
    span.stage = Stage::none;
    return span;
}

std::vector<TokenSpan> LanguageIdentifier::identify_text(std::string_view text, Language document_language) const {
    std::vector<TokenSpan> out;
    for (const auto& t : util::split_ws(text)) out.push_back(identify(t, document_language, text));
    return out;
}

}  // namespace mlehr::lingua
