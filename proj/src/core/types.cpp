#include "mlehr/core/types.hpp"

#include "mlehr/error.hpp"

namespace mlehr {

std::string_view to_string(Language lang) {
    switch (lang) {
        case Language::en: return "en";
        case Language::nl: return "nl";
        case Language::de: return "de";
        case Language::undetected: return "undetected";
    }
    return "undetected";
}

Language parse_language(std::string_view text) {
    if (text == "en") return Language::en;
    if (text == "nl") return Language::nl;
    if (text == "de") return Language::de;
    fail("UnknownLanguage", std::string(text));
}

const Feature* MedicalEvent::find(std::string_view name) const {
    for (const auto& f : features) {
        if (f.name == name) return &f;
    }
    return nullptr;
}

}  // namespace mlehr
