#pragma once

#include <vector>

#include "mlehr/core/manifest.hpp"
#include "mlehr/core/types.hpp"

namespace mlehr::core {

struct Measurement {
    double minute = 0.0;  // since admission
    double value = 0.0;   // canonical units
};

// Numeric values of one mapped variable, in event order, scaled by unit_scale.
// Rows whose value cell is missing or non-numeric are skipped.
std::vector<Measurement> extract_variable(const ICUStay& stay, const VariableSource& source);

}  // namespace mlehr::core
