#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace cpattn {

// Derives an independent stream seed from (base, stream). Used to give each
// LOOCV fold, and each purpose within a fold, its own reproducible stream.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

// mt19937_64 with hand-rolled draws: std::uniform_real_distribution and
// friends are implementation-defined, and reports must be byte-identical
// for a fixed seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t bits() { return gen_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(gen_()) * n) >> 64);
    }

    double normal();

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace cpattn
