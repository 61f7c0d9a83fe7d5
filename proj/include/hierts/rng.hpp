#pragma once

// Seeded random streams. Every stream is derived from a base seed plus a list
// of integer tags (run index, agent kind, purpose), so experiments are
// reproducible and agents never share a generator by accident.

#include <cstdint>
#include <initializer_list>
#include <random>

#include <Eigen/Dense>

namespace hierts {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t s = splitmix64(base);
    for (auto t : tags) s = splitmix64(s ^ splitmix64(t + 0x632be59bd9b4e019ULL));
    return s;
}

/// Stream purposes used with derive_seed.
enum class Stream : std::uint64_t { Instance = 1, Context = 2, Noise = 3, Agent = 4, Oracle = 5 };

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    Rng(std::uint64_t base, std::initializer_list<std::uint64_t> tags) : engine_(derive_seed(base, tags)) {}

    double normal() { return normal_(engine_); }
    double normal(double mean, double stddev) { return mean + stddev * normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }

    std::size_t uniform_index(std::size_t n) {
        return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
    }

    Eigen::VectorXd normal_vector(Eigen::Index d) {
        Eigen::VectorXd z(d);
        for (Eigen::Index i = 0; i < d; ++i) z[i] = normal();
        return z;
    }

    /// Uniform point on the unit sphere in R^d.
    Eigen::VectorXd unit_sphere(Eigen::Index d) {
        for (;;) {
            Eigen::VectorXd z = normal_vector(d);
            const double n = z.norm();
            if (n > 0.0) return z / n;
        }
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace hierts
