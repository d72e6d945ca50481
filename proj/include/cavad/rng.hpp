#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace cavad {

// Deterministic RNG. All derived draws (uniform, gauss, bounded, shuffle) are
// built directly on the mt19937_64 output stream so results do not depend on
// library-specific distribution implementations. gauss() is stateless (no
// cached spare), which keeps serialized state equal to the engine state.
class Rng {
public:
    explicit Rng(uint64_t seed = 1) : gen_(seed) {}

    uint64_t u64() { return gen_(); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n).
    uint64_t bounded(uint64_t n) {
        return static_cast<uint64_t>((static_cast<__uint128_t>(gen_()) * n) >> 64);
    }

    // Standard normal via Box-Muller; draws two uniforms per call.
    double gauss() {
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(bounded(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    std::string save_state() const {
        std::ostringstream os;
        os << gen_;
        return os.str();
    }

    void load_state(const std::string& s) {
        std::istringstream is(s);
        is >> gen_;
        if (is.fail()) throw std::runtime_error("Rng: bad state string");
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace cavad
