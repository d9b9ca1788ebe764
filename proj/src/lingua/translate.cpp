#include "mlehr/lingua/translate.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "mlehr/error.hpp"
#include "mlehr/util/fs.hpp"
#include "mlehr/util/hash.hpp"
#include "mlehr/util/rng.hpp"
#include "mlehr/util/strings.hpp"

namespace mlehr::lingua {

using nlohmann::json;

namespace {

bool single_token(std::string_view s) { return !s.empty() && s.find_first_of(" \t\r\n") == std::string_view::npos; }

}  // namespace

void BilingualDictionary::add(Language lang, const std::string& source, const std::string& english) {
    if (lang != Language::nl && lang != Language::de)
        fail("InvalidDictionary", "source language must be nl or de, got " + std::string(mlehr::to_string(lang)));
    if (!single_token(source) || !single_token(english))
        fail("InvalidDictionary", "entries must be single tokens: '" + source + "' -> '" + english + "'");
    entries_[lang][lower_utf8(source)] = lower_utf8(english);
}

std::optional<std::string> BilingualDictionary::lookup(Language lang, std::string_view source) const {
    auto l = entries_.find(lang);
    if (l == entries_.end()) return std::nullopt;
    auto it = l->second.find(std::string(source));
    if (it == l->second.end()) return std::nullopt;
    return it->second;
}

size_t BilingualDictionary::size() const {
    size_t n = 0;
    for (const auto& [lang, m] : entries_) n += m.size();
    return n;
}

BilingualDictionary BilingualDictionary::parse_tsv(const std::string& text, const std::string& source_name,
                                                   std::optional<Language> default_language) {
    BilingualDictionary d;
    size_t line_no = 0;
    for (const auto& raw : util::split(text, '\n')) {
        ++line_no;
        std::string line(util::trim(raw));
        if (line.empty()) continue;
        auto cols = util::split(line, '\t');
        const std::string where = source_name + ":" + std::to_string(line_no);
        try {
            if (cols.size() == 3) {
                d.add(parse_language(util::trim(cols[0])), std::string(util::trim(cols[1])), std::string(util::trim(cols[2])));
            } else if (cols.size() == 2) {
                if (!default_language) fail("InvalidDictionary", where + ": two-column line needs a language");
                d.add(*default_language, std::string(util::trim(cols[0])), std::string(util::trim(cols[1])));
            } else {
                fail("InvalidDictionary", where + ": expected 2 or 3 tab-separated columns");
            }
        } catch (const Error& e) {
            if (e.kind() == "InvalidDictionary" && e.detail().rfind(source_name, 0) == 0) throw;
            fail("InvalidDictionary", where + ": " + e.detail());
        }
    }
    return d;
}

BilingualDictionary BilingualDictionary::load(const std::filesystem::path& path, std::optional<Language> default_language) {
    return parse_tsv(util::read_text(path), path.string(), default_language);
}

std::string BilingualDictionary::to_tsv() const {
    std::string out;
    for (const auto& [lang, m] : entries_) {
        for (const auto& [s, e] : m) out += std::string(mlehr::to_string(lang)) + "\t" + s + "\t" + e + "\n";
    }
    return out;
}

BilingualDictionary BilingualDictionary::sample(double fraction, std::uint64_t seed) const {
    if (!(fraction >= 0.0 && fraction <= 1.0)) fail("InvalidConfig", "dictionary fraction must be in [0,1]");
    BilingualDictionary out;
    for (const auto& [lang, m] : entries_) {
        std::vector<std::string> keys;
        for (const auto& kv : m) keys.push_back(kv.first);
        util::Rng rng(util::derive_seed(seed, "dictionary-sample:" + std::string(mlehr::to_string(lang))));
        rng.shuffle(keys);
        auto keep = static_cast<size_t>(std::llround(fraction * static_cast<double>(keys.size())));
        for (size_t i = 0; i < keep; ++i) out.entries_[lang][keys[i]] = m.at(keys[i]);
    }
    return out;
}

DictionaryStack DictionaryStack::bundled() {
    auto dir = util::asset_dir() / "dictionaries";
    return DictionaryStack({BilingualDictionary::load(dir / "medical.tsv"), BilingualDictionary::load(dir / "general.tsv")});
}

std::optional<std::string> DictionaryStack::lookup(Language lang, std::string_view token) const {
    for (const auto& layer : layers_) {
        if (auto t = layer.lookup(lang, token)) return t;
    }
    if (bridge_ && (lang == Language::nl || lang == Language::de)) {
        Language other = lang == Language::nl ? Language::de : Language::nl;
        for (const auto& layer : layers_) {
            if (auto t = layer.lookup(other, token)) return t;
        }
    }
    return std::nullopt;
}

TokenSpan translate_token_dict(TokenSpan span, const DictionaryStack& dict) {
    if (span.language != Language::nl && span.language != Language::de) return span;
    if (auto t = dict.lookup(span.language, lower_utf8(span.text))) span.translation = *t;
    return span;
}

HttpCompletionClient::HttpCompletionClient(std::string endpoint, std::string token, int timeout_seconds)
    : token_(std::move(token)), timeout_(timeout_seconds) {
    auto scheme_end = endpoint.find("://");
    if (scheme_end == std::string::npos) fail("ConfigError", "TRANSLATE_ENDPOINT must be an http(s) URL: " + endpoint);
    auto path_start = endpoint.find('/', scheme_end + 3);
    scheme_host_ = endpoint.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/" : endpoint.substr(path_start);
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
    if (endpoint.rfind("https://", 0) == 0) fail("ConfigError", "https endpoints need a TLS-enabled build");
#endif
}

std::unique_ptr<HttpCompletionClient> HttpCompletionClient::from_environment() {
    const char* endpoint = std::getenv("TRANSLATE_ENDPOINT");
    if (!endpoint || !*endpoint) fail("ConfigError", "TRANSLATE_ENDPOINT is not set");
    const char* token = std::getenv("TRANSLATE_TOKEN");
    if (!token || !*token) fail("ConfigError", "TRANSLATE_TOKEN is not set");
    return std::make_unique<HttpCompletionClient>(endpoint, token);
}

std::string HttpCompletionClient::complete(const std::string& prompt) {
    httplib::Client cli(scheme_host_);
    cli.set_connection_timeout(timeout_);
    cli.set_read_timeout(timeout_);
    cli.set_bearer_token_auth(token_);
    json body = {{"prompt", prompt}, {"max_tokens", 16}, {"temperature", 0}};
    auto res = cli.Post(path_, body.dump(), "application/json");
    if (!res) fail("ServiceUnavailable", scheme_host_ + ": " + httplib::to_string(res.error()));
    if (res->status != 200) fail("ServiceUnavailable", scheme_host_ + ": HTTP " + std::to_string(res->status));
    json reply;
    try {
        reply = json::parse(res->body);
    } catch (const json::exception&) {
        return res->body;
    }
    if (reply.is_string()) return reply.get<std::string>();
    for (const char* key : {"text", "completion", "output"}) {
        if (reply.contains(key) && reply[key].is_string()) return reply[key].get<std::string>();
    }
    if (reply.contains("choices") && reply["choices"].is_array() && !reply["choices"].empty()) {
        const auto& c = reply["choices"][0];
        if (c.contains("text") && c["text"].is_string()) return c["text"].get<std::string>();
        if (c.contains("message") && c["message"].contains("content")) return c["message"]["content"].get<std::string>();
    }
    return std::string();
}

std::unique_ptr<MockCompletionClient> MockCompletionClient::from_dictionary(BilingualDictionary dict, Language lang) {
    return std::make_unique<MockCompletionClient>([dict = std::move(dict), lang](const std::string& prompt) {
        auto tok = prompt_token(prompt);
        if (auto t = dict.lookup(lang, tok)) return *t;
        return tok;
    });
}

std::string MockCompletionClient::complete(const std::string& prompt) {
    ++calls_;
    return respond_(prompt);
}

const std::string& translation_prompt_template() {
    static const std::string t = util::read_text(util::asset_dir() / "prompts" / "translate.txt");
    return t;
}

std::string translation_prompt(const std::string& token, const std::string& context) {
    std::string p = translation_prompt_template();
    if (!p.empty() && p.back() != '\n') p += '\n';
    return p + "Token: " + token + "\nContext: " + context + "\n";
}

std::string prompt_token(const std::string& prompt) {
    auto pos = prompt.rfind("\nToken: ");
    if (pos == std::string::npos) return {};
    pos += 8;
    auto end = prompt.find('\n', pos);
    return prompt.substr(pos, end == std::string::npos ? std::string::npos : end - pos);
}

std::optional<std::string> accept_translation(const std::string& response) {
    auto t = util::trim(response);
    if (t.empty()) return std::nullopt;
    bool letter = false;
    for (char c : t) {
        if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) {
            letter = true;
        } else if (c != '-') {
            return std::nullopt;
        }
    }
    if (!letter) return std::nullopt;
    return util::lower_ascii(t);
}

TranslationCache::TranslationCache(std::filesystem::path file) : file_(std::move(file)) {
    if (!std::filesystem::exists(*file_)) return;
    size_t line_no = 0;
    for (const auto& line : util::split(util::read_text(*file_), '\n')) {
        ++line_no;
        if (util::trim(line).empty()) continue;
        try {
            auto j = json::parse(line);
            CacheEntry e;
            auto result = j.at("result").get<std::string>();
            e.rejected = result == "REJECTED";
            if (!e.rejected) e.english = result;
            entries_.emplace(Key{j.at("token").get<std::string>(), parse_language(j.at("lang").get<std::string>()),
                                 std::stoull(j.at("context").get<std::string>(), nullptr, 16)},
                             e);
        } catch (const std::exception& ex) {
            fail("CorruptFile", file_->string() + ":" + std::to_string(line_no) + ": " + ex.what());
        }
    }
}

std::optional<CacheEntry> TranslationCache::find(const std::string& token, Language lang, std::uint64_t context_hash) const {
    std::shared_lock lock(mutex_);
    auto it = entries_.find(Key{token, lang, context_hash});
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void TranslationCache::insert(const std::string& token, Language lang, std::uint64_t context_hash, const CacheEntry& entry) {
    std::unique_lock lock(mutex_);
    if (!entries_.emplace(Key{token, lang, context_hash}, entry).second) return;
    if (!file_) return;
    json j = {{"token", token},
              {"lang", std::string(mlehr::to_string(lang))},
              {"context", util::hex64(context_hash)},
              {"result", entry.rejected ? std::string("REJECTED") : entry.english}};
    if (file_->has_parent_path()) util::ensure_dir(file_->parent_path());
    std::ofstream out(*file_, std::ios::app | std::ios::binary);
    out << j.dump() << '\n';
    if (!out) fail("IoError", "cannot append to " + file_->string());
}

size_t TranslationCache::size() const {
    std::shared_lock lock(mutex_);
    return entries_.size();
}

std::optional<std::string> ServiceTranslator::translate(const std::string& token, Language lang, const std::string& context) {
    const auto h = util::fnv1a64(context);
    if (auto e = cache_.find(token, lang, h)) {
        ++stats_.cache_hits;
        if (e->rejected) return std::nullopt;
        return e->english;
    }
    ++stats_.calls;
    auto reply = client_.complete(translation_prompt(token, context));
    auto accepted = accept_translation(reply);
    if (accepted) {
        ++stats_.accepted;
        cache_.insert(token, lang, h, CacheEntry{false, *accepted});
    } else {
        ++stats_.rejected;
        cache_.insert(token, lang, h, CacheEntry{true, {}});
    }
    return accepted;
}

std::optional<Language> ServiceLanguageVoter::vote(const std::string& token, const std::string& context) {
    static const std::string tmpl = util::read_text(util::asset_dir() / "prompts" / "language_vote.txt");
    std::string reply;
    try {
        reply = client_.complete(tmpl + "Token: " + token + "\nContext: " + context + "\n");
    } catch (const Error& e) {
        if (e.kind() == "ServiceUnavailable") return std::nullopt;
        throw;
    }
    auto t = util::lower_ascii(util::trim(reply));
    if (t == "en") return Language::en;
    if (t == "nl") return Language::nl;
    if (t == "de") return Language::de;
    return std::nullopt;
}

AlignMode parse_align_mode(std::string_view s) {
    if (s == "none") return AlignMode::none;
    if (s == "dict") return AlignMode::dict;
    if (s == "service") return AlignMode::service;
    fail("InvalidConfig", "unknown alignment mode '" + std::string(s) + "'");
}

std::string_view to_string(AlignMode m) {
    switch (m) {
        case AlignMode::none: return "none";
        case AlignMode::dict: return "dict";
        case AlignMode::service: return "service";
    }
    return "none";
}

double AlignStats::foreign_rate() const {
    return tokens == 0 ? 0.0 : static_cast<double>(foreign()) / static_cast<double>(tokens);
}

double AlignStats::residual_rate() const {
    return tokens == 0 ? 0.0 : static_cast<double>(residual_foreign()) / static_cast<double>(tokens);
}

void AlignStats::merge(const AlignStats& o) {
    tokens += o.tokens;
    skipped += o.skipped;
    for (size_t i = 0; i < by_language.size(); ++i) by_language[i] += o.by_language[i];
    translated += o.translated;
    service_fallbacks += o.service_fallbacks;
}

std::string Aligner::align(std::string_view text, AlignMode mode, AlignStats* stats) const {
    if (mode == AlignMode::none && !stats) return std::string(text);
    if (mode == AlignMode::dict && !dict_) fail("ConfigError", "dict alignment needs a dictionary");
    if (mode == AlignMode::service && !service_) fail("ConfigError", "service alignment needs a translation client");
    const std::string context(text);
    auto pieces = util::split(text, ' ');
    for (auto& tok : pieces) {
        if (tok.empty()) continue;
        auto span = id_.identify(tok, site_language_, context);
        if (stats) {
            ++stats->tokens;
            if (span.stage == Stage::skipped) {
                ++stats->skipped;
                continue;
            }
            ++stats->by_language[language_index(span.language)];
        }
        if (mode == AlignMode::none || (span.language != Language::nl && span.language != Language::de)) continue;
        const std::string word = lower_utf8(tok);
        std::optional<std::string> tr;
        if (mode == AlignMode::service) {
            bool fallback = service_down_.load();
            if (!fallback) {
                try {
                    tr = service_->translate(word, span.language, context);
                } catch (const Error& e) {
                    if (e.kind() != "ServiceUnavailable") throw;
                    service_down_ = true;
                    fallback = true;
                }
            }
            if (fallback) {
                if (stats) ++stats->service_fallbacks;
                if (dict_) tr = dict_->lookup(span.language, word);
            }
        } else {
            tr = dict_->lookup(span.language, word);
        }
        if (tr) {
            tok = *tr;
            if (stats) ++stats->translated;
        }
    }
    std::string out;
    for (size_t i = 0; i < pieces.size(); ++i) {
        if (i) out += ' ';
        out += pieces[i];
    }
    return out;
}

std::vector<text::CorpusRecord> align_corpus(const std::vector<text::CorpusRecord>& records, const Aligner& aligner,
                                             AlignMode mode, size_t jobs, AlignStats* stats) {
    std::vector<text::CorpusRecord> out(records.size());
    jobs = std::max<size_t>(1, std::min(jobs, records.size()));
    std::vector<AlignStats> part(jobs);
    std::vector<std::exception_ptr> errors(jobs);
    auto work = [&](size_t k) {
        try {
            for (size_t i = k; i < records.size(); i += jobs) {
                out[i] = records[i];
                out[i].text = aligner.align(records[i].text, mode, stats ? &part[k] : nullptr);
            }
        } catch (...) {
            errors[k] = std::current_exception();
        }
    };
    if (jobs == 1) {
        work(0);
    } else {
        std::vector<std::thread> threads;
        for (size_t k = 0; k < jobs; ++k) threads.emplace_back(work, k);
        for (auto& t : threads) t.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    if (stats) {
        for (const auto& p : part) stats->merge(p);
    }
    return out;
}

}  // namespace mlehr::lingua
