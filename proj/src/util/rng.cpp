#include "mlehr/util/rng.hpp"

#include <cmath>

#include "mlehr/util/hash.hpp"

namespace mlehr::util {

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return out;
}

std::uint64_t Rng::below(std::uint64_t n) {
    if (n <= 1) return 0;
    std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return x % n;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u, v, s;
    do {
        u = uniform(-1.0, 1.0);
        v = uniform(-1.0, 1.0);
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
}

double Rng::exponential(double rate) { return -std::log(1.0 - uniform()) / rate; }

int Rng::poisson(double mean) {
    double l = std::exp(-mean);
    int k = 0;
    double p = uniform();
    while (p > l) {
        ++k;
        p *= uniform();
    }
    return k;
}

}  // namespace mlehr::util
