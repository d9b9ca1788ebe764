#include "mlehr/core/variables.hpp"

#include "mlehr/util/strings.hpp"

namespace mlehr::core {

namespace {

bool matches(const Feature& f, const std::string& wanted) {
    if (f.is_number()) {
        auto v = util::parse_double(wanted);
        return v && *v == f.number();
    }
    return f.text() == wanted;
}

}  // namespace

std::vector<Measurement> extract_variable(const ICUStay& stay, const VariableSource& source) {
    std::vector<Measurement> out;
    for (const auto& e : stay.events) {
        if (e.source_table != source.table) continue;
        if (!source.match_column.empty()) {
            const Feature* key = e.find(source.match_column);
            if (!key || !matches(*key, source.match_value)) continue;
        }
        const Feature* f = e.find(source.column);
        if (!f || !f->is_number()) continue;
        out.push_back(Measurement{e.timestamp, f->number() * source.unit_scale});
    }
    return out;
}

}  // namespace mlehr::core
