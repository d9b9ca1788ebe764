#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mlehr::core {

struct DatasetSplit {
    std::vector<std::string> train;
    std::vector<std::string> valid;
    std::vector<std::string> test;
};

// Patient-level 8:1:1 split. Each part gets floor(share * n); the remainder
// goes to train, then valid, then test. The result depends only on the set of
// ids and the seed. Throws DuplicatePatient / EmptyInput.
DatasetSplit split_patients(std::vector<std::string> patients, std::uint64_t seed);

}  // namespace mlehr::core
