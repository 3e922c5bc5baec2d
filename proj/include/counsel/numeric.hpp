#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace counsel {

/// Seeded generator whose derived draws are identical on every platform.
/// (std:: distributions are implementation-defined, so they are avoided.)
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 bits of mantissa.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be > 0.
    std::size_t index(std::size_t n);

    /// Standard normal via Box-Muller.
    double normal();
    double normal(double mean, double sd) { return mean + sd * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Linear-interpolated quantile of already-sorted data (Hyndman-Fan type 7).
double sorted_quantile(std::span<const double> sorted, double q);

/// Quantile of unsorted data; copies and sorts.
double quantile(std::span<const double> values, double q);

double mean(std::span<const double> values);

}  // namespace counsel
