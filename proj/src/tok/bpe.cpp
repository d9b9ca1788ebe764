#include "mlehr/tok/bpe.hpp"

#include <algorithm>
#include <array>
#include <mutex>
#include <set>

#include "json.hpp"
#include "mlehr/error.hpp"
#include "mlehr/util/fs.hpp"
#include "mlehr/util/strings.hpp"

namespace mlehr::tok {

using nlohmann::json;

namespace {

const std::array<std::uint32_t, 256>& byte_codepoints() {
    static const std::array<std::uint32_t, 256> table = [] {
        std::array<std::uint32_t, 256> t{};
        std::uint32_t next = 256;
        for (std::uint32_t b = 0; b < 256; ++b) {
            bool printable = (b >= 33 && b <= 126) || (b >= 161 && b <= 172) || (b >= 174 && b <= 255);
            t[b] = printable ? b : next++;
        }
        return t;
    }();
    return table;
}

void append_utf8(std::string& out, std::uint32_t cp) {
    if (cp < 0x80) {
        out += static_cast<char>(cp);
    } else if (cp < 0x800) {
        out += static_cast<char>(0xC0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        out += static_cast<char>(0xE0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
}

std::vector<std::string> split_spaces(std::string_view text) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        auto pos = text.find(' ', start);
        out.emplace_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

constexpr std::int32_t kFirstByteType = 2;

}  // namespace

std::string bytes_to_unicode(std::string_view bytes) {
    std::string out;
    for (unsigned char b : bytes) append_utf8(out, byte_codepoints()[b]);
    return out;
}

std::string unicode_to_bytes(std::string_view text) {
    static const std::map<std::uint32_t, unsigned char> inverse = [] {
        std::map<std::uint32_t, unsigned char> m;
        for (unsigned b = 0; b < 256; ++b) m[byte_codepoints()[b]] = static_cast<unsigned char>(b);
        return m;
    }();
    std::string out;
    size_t i = 0;
    while (i < text.size()) {
        auto c = static_cast<unsigned char>(text[i]);
        std::uint32_t cp;
        size_t len;
        if (c < 0x80) {
            cp = c, len = 1;
        } else if ((c >> 5) == 0x6 && i + 1 < text.size()) {
            cp = ((c & 0x1Fu) << 6) | (static_cast<unsigned char>(text[i + 1]) & 0x3Fu), len = 2;
        } else if ((c >> 4) == 0xE && i + 2 < text.size()) {
            cp = ((c & 0x0Fu) << 12) | ((static_cast<unsigned char>(text[i + 1]) & 0x3Fu) << 6) |
                 (static_cast<unsigned char>(text[i + 2]) & 0x3Fu);
            len = 3;
        } else {
            fail("CorruptFile", "invalid byte encoding in vocabulary");
        }
        auto it = inverse.find(cp);
        if (it == inverse.end()) fail("CorruptFile", "unmapped code point in vocabulary");
        out += static_cast<char>(it->second);
        i += len;
    }
    return out;
}

Tokenizer::Tokenizer() : cache_mutex_(std::make_unique<std::shared_mutex>()) { rebuild(); }
Tokenizer::Tokenizer(const Tokenizer& o)
    : vocab_size_(o.vocab_size_), protected_(o.protected_), merges_(o.merges_),
      cache_mutex_(std::make_unique<std::shared_mutex>()) {
    rebuild();
}
Tokenizer& Tokenizer::operator=(const Tokenizer& o) {
    if (this != &o) {
        vocab_size_ = o.vocab_size_;
        protected_ = o.protected_;
        merges_ = o.merges_;
        rebuild();
    }
    return *this;
}
Tokenizer::Tokenizer(Tokenizer&&) noexcept = default;
Tokenizer& Tokenizer::operator=(Tokenizer&&) noexcept = default;
Tokenizer::~Tokenizer() = default;

void Tokenizer::rebuild() {
    types_.clear();
    type_of_.clear();
    protected_type_.clear();
    merge_rank_.clear();
    if (cache_mutex_) {
        std::unique_lock lock(*cache_mutex_);
        cache_.clear();
    }
    types_ = {"<pad>", "<cls>"};
    for (int b = 0; b < 256; ++b) {
        std::string s(1, static_cast<char>(b));
        type_of_[s] = static_cast<std::int32_t>(types_.size());
        types_.push_back(s);
    }
    for (const auto& p : protected_) {
        protected_type_[p] = static_cast<std::int32_t>(types_.size());
        types_.push_back(p);
    }
    for (size_t r = 0; r < merges_.size(); ++r) {
        const auto& [a, b] = merges_[r];
        auto ia = type_of_.find(a), ib = type_of_.find(b);
        if (ia == type_of_.end() || ib == type_of_.end()) fail("CorruptFile", "merge refers to an unknown piece");
        std::string joined = a + b;
        std::int32_t t;
        if (auto it = type_of_.find(joined); it != type_of_.end()) {
            t = it->second;
        } else {
            t = static_cast<std::int32_t>(types_.size());
            types_.push_back(joined);
            type_of_[joined] = t;
        }
        merge_rank_.emplace(std::pair{ia->second, ib->second}, std::pair{static_cast<std::int32_t>(r), t});
    }
}

Tokenizer Tokenizer::train(const std::vector<std::string>& lines, size_t vocab_size,
                           std::vector<std::string> protected_tokens) {
    std::sort(protected_tokens.begin(), protected_tokens.end());
    protected_tokens.erase(std::unique(protected_tokens.begin(), protected_tokens.end()), protected_tokens.end());
    for (const auto& p : protected_tokens) {
        if (p.empty() || p.find(' ') != std::string::npos) fail("InvalidConfig", "protected tokens must be non-empty words");
    }
    const size_t base = 2 + 256 + protected_tokens.size();
    if (vocab_size <= base)
        fail("InvalidConfig", "vocab_size " + std::to_string(vocab_size) + " must exceed " + std::to_string(base));

    Tokenizer tk;
    tk.vocab_size_ = vocab_size;
    tk.protected_ = protected_tokens;
    tk.rebuild();
    const std::set<std::string> prot(protected_tokens.begin(), protected_tokens.end());

    std::map<std::string, long long> word_freq;
    bool any = false;
    for (const auto& line : lines) {
        for (auto& w : split_spaces(line)) {
            if (w.empty()) continue;
            any = true;
            if (!prot.count(w)) ++word_freq[w];
        }
    }
    if (!any) fail("CorpusEmpty", "no tokens in the training corpus");

    struct Word {
        std::vector<std::int32_t> sym;
        long long freq;
    };
    std::vector<Word> words;
    for (const auto& [w, f] : word_freq) {
        Word wd{{}, f};
        for (unsigned char c : w) wd.sym.push_back(kFirstByteType + c);
        words.push_back(std::move(wd));
    }

    while (tk.types_.size() < vocab_size) {
        std::map<std::pair<std::int32_t, std::int32_t>, long long> counts;
        for (const auto& w : words) {
            for (size_t i = 0; i + 1 < w.sym.size(); ++i) counts[{w.sym[i], w.sym[i + 1]}] += w.freq;
        }
        if (counts.empty()) break;
        const std::pair<std::int32_t, std::int32_t>* best = nullptr;
        long long best_count = 0;
        for (const auto& [pair, c] : counts) {
            if (c > best_count) {
                best = &pair, best_count = c;
            } else if (c == best_count) {
                const auto& ba = tk.types_[best->first];
                const auto& bb = tk.types_[best->second];
                const auto& pa = tk.types_[pair.first];
                const auto& pb = tk.types_[pair.second];
                if (std::tie(pa, pb) < std::tie(ba, bb)) best = &pair;
            }
        }
        const auto [a, b] = *best;
        const std::string joined = tk.types_[a] + tk.types_[b];
        tk.merges_.emplace_back(tk.types_[a], tk.types_[b]);
        std::int32_t t;
        if (auto it = tk.type_of_.find(joined); it != tk.type_of_.end()) {
            t = it->second;
        } else {
            t = static_cast<std::int32_t>(tk.types_.size());
            tk.types_.push_back(joined);
            tk.type_of_[joined] = t;
        }
        tk.merge_rank_.emplace(std::pair{a, b}, std::pair{static_cast<std::int32_t>(tk.merges_.size() - 1), t});
        for (auto& w : words) {
            std::vector<std::int32_t> out;
            out.reserve(w.sym.size());
            for (size_t i = 0; i < w.sym.size(); ++i) {
                if (i + 1 < w.sym.size() && w.sym[i] == a && w.sym[i + 1] == b) {
                    out.push_back(t);
                    ++i;
                } else {
                    out.push_back(w.sym[i]);
                }
            }
            w.sym = std::move(out);
        }
    }
    return tk;
}

const std::vector<std::int32_t>& Tokenizer::word_types(const std::string& word) const {
    {
        std::shared_lock lock(*cache_mutex_);
        if (auto it = cache_.find(word); it != cache_.end()) return it->second;
    }
    std::vector<std::int32_t> sym;
    if (auto p = protected_type_.find(word); p != protected_type_.end()) {
        sym.push_back(p->second);
    } else {
        for (unsigned char c : word) sym.push_back(kFirstByteType + c);
        while (sym.size() > 1) {
            std::int32_t best_rank = -1, merged = -1;
            std::pair<std::int32_t, std::int32_t> best_pair;
            for (size_t i = 0; i + 1 < sym.size(); ++i) {
                auto it = merge_rank_.find({sym[i], sym[i + 1]});
                if (it != merge_rank_.end() && (best_rank < 0 || it->second.first < best_rank)) {
                    best_rank = it->second.first;
                    merged = it->second.second;
                    best_pair = it->first;
                }
            }
            if (best_rank < 0) break;
            std::vector<std::int32_t> out;
            out.reserve(sym.size());
            for (size_t i = 0; i < sym.size(); ++i) {
                if (i + 1 < sym.size() && sym[i] == best_pair.first && sym[i + 1] == best_pair.second) {
                    out.push_back(merged);
                    ++i;
                } else {
                    out.push_back(sym[i]);
                }
            }
            sym = std::move(out);
        }
    }
    std::unique_lock lock(*cache_mutex_);
    return cache_.emplace(word, std::move(sym)).first->second;
}

std::vector<std::int32_t> Tokenizer::encode(std::string_view text) const {
    std::vector<std::int32_t> ids;
    if (text.empty()) return ids;
    const auto words = split_spaces(text);
    const std::int32_t space_type = kFirstByteType + ' ';
    for (size_t k = 0; k < words.size(); ++k) {
        if (words[k].empty()) {
            if (k > 0) ids.push_back(2 * space_type);
            continue;
        }
        const auto& types = word_types(words[k]);
        for (size_t i = 0; i < types.size(); ++i) ids.push_back(2 * types[i] + ((i == 0 && k > 0) ? 1 : 0));
    }
    return ids;
}

std::string Tokenizer::decode(const std::vector<std::int32_t>& ids) const {
    std::string out;
    for (auto id : ids) {
        if (id < 0 || static_cast<size_t>(id) >= id_count()) fail("UnknownToken", std::to_string(id));
        if (id & 1) out += ' ';
        out += types_[static_cast<size_t>(id >> 1)];
    }
    return out;
}

std::string Tokenizer::to_json() const {
    json j;
    j["version"] = kVersion;
    j["vocab_size"] = vocab_size_;
    j["protected"] = protected_;
    json m = json::array();
    for (const auto& [a, b] : merges_) m.push_back({bytes_to_unicode(a), bytes_to_unicode(b)});
    j["merges"] = m;
    return j.dump(1);
}

Tokenizer Tokenizer::from_json(const std::string& text) {
    Tokenizer tk;
    try {
        auto j = json::parse(text);
        if (j.at("version").get<int>() != kVersion) fail("CorruptFile", "unsupported vocabulary version");
        tk.vocab_size_ = j.at("vocab_size").get<size_t>();
        tk.protected_ = j.at("protected").get<std::vector<std::string>>();
        for (const auto& m : j.at("merges")) {
            tk.merges_.emplace_back(unicode_to_bytes(m.at(0).get<std::string>()), unicode_to_bytes(m.at(1).get<std::string>()));
        }
    } catch (const json::exception& e) {
        fail("CorruptFile", std::string("vocabulary: ") + e.what());
    }
    tk.rebuild();
    return tk;
}

void Tokenizer::save(const std::filesystem::path& path) const { util::atomic_write(path, to_json()); }

Tokenizer Tokenizer::load(const std::filesystem::path& path) { return from_json(util::read_text(path)); }

}  // namespace mlehr::tok
