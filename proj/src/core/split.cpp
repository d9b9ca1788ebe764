#include "mlehr/core/split.hpp"

#include <algorithm>

#include "mlehr/error.hpp"
#include "mlehr/util/hash.hpp"
#include "mlehr/util/rng.hpp"

namespace mlehr::core {

DatasetSplit split_patients(std::vector<std::string> patients, std::uint64_t seed) {
    if (patients.empty()) fail("EmptyInput", "no patients to split");
    std::sort(patients.begin(), patients.end());
    for (size_t i = 1; i < patients.size(); ++i) {
        if (patients[i] == patients[i - 1]) fail("DuplicatePatient", patients[i]);
    }
    util::Rng rng(util::derive_seed(seed, "patient-split"));
    rng.shuffle(patients);

    const size_t n = patients.size();
    size_t sizes[3] = {n * 8 / 10, n / 10, n / 10};
    size_t remainder = n - sizes[0] - sizes[1] - sizes[2];
    for (size_t i = 0; remainder > 0; i = (i + 1) % 3, --remainder) ++sizes[i];

    DatasetSplit split;
    auto first = patients.begin();
    split.train.assign(first, first + static_cast<long>(sizes[0]));
    split.valid.assign(first + static_cast<long>(sizes[0]), first + static_cast<long>(sizes[0] + sizes[1]));
    split.test.assign(first + static_cast<long>(sizes[0] + sizes[1]), patients.end());
    for (auto* part : {&split.train, &split.valid, &split.test}) std::sort(part->begin(), part->end());
    return split;
}

}  // namespace mlehr::core
