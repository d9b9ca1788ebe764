#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace mlehr {

enum class Language { en, nl, de, undetected };

std::string_view to_string(Language lang);
// Accepts "en", "nl", "de"; throws Error("UnknownLanguage", text) otherwise.
Language parse_language(std::string_view text);

using FeatureValue = std::variant<std::string, double>;

struct Feature {
    std::string name;
    FeatureValue value;

    bool is_number() const { return std::holds_alternative<double>(value); }
    double number() const { return std::get<double>(value); }
    const std::string& text() const { return std::get<std::string>(value); }
    bool operator==(const Feature&) const = default;
};

struct MedicalEvent {
    std::string event_type;
    std::string source_table;
    double timestamp = 0.0;  // minutes since ICU admission
    std::vector<Feature> features;

    const Feature* find(std::string_view name) const;
    bool operator==(const MedicalEvent&) const = default;
};

struct ICUStay {
    std::string site_id;
    std::string patient_id;
    std::string stay_id;
    double age_years = 0.0;
    double admit_time = 0.0;      // absolute minutes
    double discharge_time = 0.0;  // absolute minutes
    std::optional<double> death_time;
    std::optional<double> weight_kg;
    bool dialysis = false;
    std::vector<MedicalEvent> events;  // non-decreasing timestamp

    double los_minutes() const { return discharge_time - admit_time; }
    std::optional<double> death_offset() const {
        if (!death_time) return std::nullopt;
        return *death_time - admit_time;
    }
    bool operator==(const ICUStay&) const = default;
};

}  // namespace mlehr
