#pragma once

// Seeded random source with explicit, serializable state. Uniform and normal
// draws are generated from raw mt19937_64 output rather than the standard
// distribution adaptors, so sequences are identical across standard library
// implementations and survive checkpoint round-trips bit for bit.

#include <cstdint>
#include <cstring>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include "avlae/tensor.hpp"

namespace avlae {

class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    /// Uniform draw in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via the polar method; the spare value is cached and
    /// serialized so a restored stream continues exactly.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double f = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * f;
        has_spare_ = true;
        return u * f;
    }

    /// Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
    std::int64_t uniform_int(std::int64_t n) {
        if (n <= 0) throw std::invalid_argument("uniform_int: n must be positive");
        const std::uint64_t un = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        std::uint64_t r;
        do {
            r = eng_();
        } while (r >= limit);
        return static_cast<std::int64_t>(r % un);
    }

    std::string save() const {
        std::ostringstream os;
        os << eng_ << ' ' << (has_spare_ ? 1 : 0) << ' ';
        std::uint64_t bits;
        std::memcpy(&bits, &spare_, sizeof(bits));
        os << bits;
        return os.str();
    }

    void restore(const std::string& state) {
        std::istringstream is(state);
        int spare_flag = 0;
        std::uint64_t bits = 0;
        is >> eng_ >> spare_flag >> bits;
        if (is.fail()) throw std::invalid_argument("Rng::restore: malformed state string");
        has_spare_ = spare_flag != 0;
        std::memcpy(&spare_, &bits, sizeof(spare_));
    }

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

template <typename T>
TensorPtr<T> randn_tensor(Rng& rng, const Shape& shape, bool requires_grad = false) {
    std::vector<T> d(static_cast<std::size_t>(numel(shape)));
    for (auto& v : d) v = static_cast<T>(rng.normal());
    return TensorT<T>::make(shape, std::move(d), requires_grad);
}

template <typename T>
TensorPtr<T> uniform_tensor(Rng& rng, const Shape& shape, double lo, double hi,
                            bool requires_grad = false) {
    std::vector<T> d(static_cast<std::size_t>(numel(shape)));
    for (auto& v : d) v = static_cast<T>(rng.uniform(lo, hi));
    return TensorT<T>::make(shape, std::move(d), requires_grad);
}

/// Fan-in scaled uniform initialization for weights: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename T>
TensorPtr<T> fan_in_uniform(Rng& rng, const Shape& shape, std::int64_t fan_in) {
    if (fan_in < 1) throw std::invalid_argument("fan_in_uniform: fan_in must be positive");
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return uniform_tensor<T>(rng, shape, -bound, bound, true);
}

}  // namespace avlae
