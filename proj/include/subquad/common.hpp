#ifndef SUBQUAD_COMMON_HPP
#define SUBQUAD_COMMON_HPP

#include <Eigen/Dense>
#include <boost/random/mersenne_twister.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace subquad {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// =============================================================================
// Errors
// =============================================================================

enum class ErrorCode {
    dimension_mismatch,
    domain,
    non_unit_input,
    rank_deficient,
    no_convergence,
    singular_gram,
    non_positive_lambda,
    size_guard,
    config,
    io,
};

inline const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::dimension_mismatch: return "DimensionMismatch";
        case ErrorCode::domain: return "Domain";
        case ErrorCode::non_unit_input: return "NonUnitInput";
        case ErrorCode::rank_deficient: return "RankDeficient";
        case ErrorCode::no_convergence: return "NoConvergence";
        case ErrorCode::singular_gram: return "SingularGram";
        case ErrorCode::non_positive_lambda: return "NonPositiveLambda";
        case ErrorCode::size_guard: return "SizeGuard";
        case ErrorCode::config: return "Config";
        case ErrorCode::io: return "Io";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

inline void require(bool cond, ErrorCode code, const char* what) {
    if (!cond) throw Error(code, what);
}

inline void require_dims(bool cond, const char* what) {
    if (!cond) throw Error(ErrorCode::dimension_mismatch, what);
}

// =============================================================================
// Sparse vectors: index-sorted (index, value) pairs.
// =============================================================================

struct SparseVector {
    Index size = 0;
    std::vector<Index> index;
    std::vector<double> value;

    Index nnz() const { return static_cast<Index>(index.size()); }

    Vector to_dense() const {
        Vector out = Vector::Zero(size);
        for (std::size_t p = 0; p < index.size(); ++p) out[index[p]] = value[p];
        return out;
    }

    double squared_norm() const {
        double acc = 0.0;
        for (double v : value) acc += v * v;
        return acc;
    }

    /// Keeps every entry that is not exactly zero.
    static SparseVector from_dense(const Vector& x) {
        SparseVector out;
        out.size = x.size();
        for (Index i = 0; i < x.size(); ++i) {
            if (x[i] != 0.0) {
                out.index.push_back(i);
                out.value.push_back(x[i]);
            }
        }
        return out;
    }
};

inline double dot(const SparseVector& x, const SparseVector& y) {
    double acc = 0.0;
    std::size_t p = 0, q = 0;
    while (p < x.index.size() && q < y.index.size()) {
        if (x.index[p] == y.index[q]) {
            acc += x.value[p] * y.value[q];
            ++p;
            ++q;
        } else if (x.index[p] < y.index[q]) {
            ++p;
        } else {
            ++q;
        }
    }
    return acc;
}

// =============================================================================
// Standard normal helpers
// =============================================================================

inline double normal_pdf(double x) {
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Upper tail 1 - Phi(x), accurate for large x.
inline double normal_sf(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

// =============================================================================
// Seeding. SplitMix64 derives independent child seeds from (seed, tag...) so
// every stream is addressable without depending on evaluation order.
// =============================================================================

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
    return splitmix64(splitmix64(seed) ^ splitmix64(tag + 0x632BE59BD9B4E019ULL));
}

template <typename... Tags>
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, Tags... rest) {
    return derive_seed(derive_seed(seed, tag), static_cast<std::uint64_t>(rest)...);
}

// Same 64-bit Mersenne Twister stream as std::mt19937_64, about twice as fast
// with GCC's libstdc++ on the weight-initialization hot loop.
using Engine = boost::random::mt19937_64;

inline Engine make_engine(std::uint64_t seed) { return Engine(seed); }

/// Uniform double in [0, 1) from the top 53 bits; identical on every platform.
inline double uniform01(Engine& eng) {
    return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

inline int rademacher(Engine& eng) { return (eng() >> 63) ? 1 : -1; }

/// Uniform integer in [0, n) via Lemire's multiply-shift, rejection-free for
/// the sizes used here (bias below 2^-40 for n < 2^24).
inline std::uint64_t uniform_index(Engine& eng, std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(eng()) * n) >> 64);
}

// =============================================================================
// Misc numeric utilities
// =============================================================================

inline bool is_power_of_two(std::uint64_t n) { return n > 0 && (n & (n - 1)) == 0; }

inline Index next_power_of_two(Index n) {
    Index p = 1;
    while (p < n) p <<= 1;
    return p;
}

inline double relative_error(const Matrix& got, const Matrix& want) {
    const double denom = want.norm();
    const double diff = (got - want).norm();
    return denom > 0.0 ? diff / denom : diff;
}

/// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    require(x.size() == y.size() && x.size() >= 2, ErrorCode::domain, "slope needs >= 2 points");
    const auto n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double lx = std::log(x[i]), ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

inline double median(std::vector<double> v) {
    require(!v.empty(), ErrorCode::domain, "median of empty sample");
    std::sort(v.begin(), v.end());
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

// =============================================================================
// Worker parallelism. SUBQUAD_THREADS caps the pool (0 or unset = hardware).
// =============================================================================

inline unsigned worker_count() {
    unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("SUBQUAD_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) return static_cast<unsigned>(std::min<long>(v, hw));
    }
    return hw;
}

/// Runs body(i) for i in [0, n). Bodies must only touch disjoint state.
template <typename Body>
void parallel_for(Index n, Body&& body) {
    const unsigned workers = static_cast<unsigned>(std::min<Index>(worker_count(), n));
    if (workers <= 1) {
        for (Index i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (Index i = w; i < n; i += workers) body(i);
        });
    }
}

}  // namespace subquad

#endif  // SUBQUAD_COMMON_HPP
