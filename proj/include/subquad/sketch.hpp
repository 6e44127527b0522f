#ifndef SUBQUAD_SKETCH_HPP
#define SUBQUAD_SKETCH_HPP

// Degree-two tensor sketches of x (x) y that never form the m1*m2 tensor, and
// an SRHT subspace embedding used to build the regression preconditioner.
//
// The tensor x (x) y is indexed row-major: coordinate (i, j) -> i * m2 + j.

#include "subquad/common.hpp"

#include <unsupported/Eigen/FFT>

#include <array>
#include <complex>
#include <span>
#include <variant>

namespace subquad {

// =============================================================================
// Fast Walsh-Hadamard transform (unnormalized, +-1 entries)
// =============================================================================

inline void fwht(std::span<double> x) {
    const std::size_t n = x.size();
    if (!is_power_of_two(n)) throw Error(ErrorCode::domain, "fwht: length must be a power of two");
    for (std::size_t h = 1; h < n; h <<= 1) {
        for (std::size_t i = 0; i < n; i += h << 1) {
            for (std::size_t j = i; j < i + h; ++j) {
                const double a = x[j], b = x[j + h];
                x[j] = a + b;
                x[j + h] = a - b;
            }
        }
    }
}

inline Vector fwht(Vector x) {
    fwht(std::span<double>(x.data(), static_cast<std::size_t>(x.size())));
    return x;
}

/// H[r, c] = (-1)^{popcount(r & c)}.
inline double hadamard_entry(std::uint64_t r, std::uint64_t c) {
    return (__builtin_popcountll(r & c) & 1) ? -1.0 : 1.0;
}

// =============================================================================
// k-wise independent polynomial hashing modulo the Mersenne prime 2^61 - 1
// =============================================================================

namespace detail {

inline constexpr std::uint64_t mersenne61 = (std::uint64_t{1} << 61) - 1;

inline std::uint64_t mod61(unsigned __int128 x) {
    std::uint64_t lo = static_cast<std::uint64_t>(x & mersenne61);
    std::uint64_t hi = static_cast<std::uint64_t>(x >> 61);
    std::uint64_t r = lo + hi;
    r = (r & mersenne61) + (r >> 61);
    return r >= mersenne61 ? r - mersenne61 : r;
}

/// A random polynomial with K coefficients: a K-wise independent family on [p].
template <std::size_t K>
struct PolyHash {
    std::array<std::uint64_t, K> coef{};

    static PolyHash draw(Engine& eng) {
        PolyHash h;
        for (auto& c : h.coef) c = uniform_index(eng, mersenne61);
        return h;
    }

    std::uint64_t operator()(std::uint64_t x) const {
        std::uint64_t acc = 0;
        for (std::size_t k = K; k-- > 0;) acc = mod61(static_cast<unsigned __int128>(acc) * x + coef[k]);
        return acc;
    }
};

}  // namespace detail

/// Count sketch [m] -> [s]: bucket from a 3-wise, sign from a 4-wise family.
struct CountSketchParams {
    Index m = 0;
    Index s = 0;
    std::uint64_t seed = 0;
    detail::PolyHash<3> bucket_hash;
    detail::PolyHash<4> sign_hash;
    std::vector<Index> bucket;   ///< tabulated h(i)
    std::vector<double> sign;    ///< tabulated sigma(i)

    static CountSketchParams make(Index m, Index s, std::uint64_t seed) {
        require(m >= 1 && s >= 1, ErrorCode::domain, "count sketch needs m, s >= 1");
        CountSketchParams p;
        p.m = m;
        p.s = s;
        p.seed = seed;
        Engine eng = make_engine(seed);
        p.bucket_hash = detail::PolyHash<3>::draw(eng);
        p.sign_hash = detail::PolyHash<4>::draw(eng);
        p.bucket.resize(static_cast<std::size_t>(m));
        p.sign.resize(static_cast<std::size_t>(m));
        for (Index i = 0; i < m; ++i) {
            const auto key = static_cast<std::uint64_t>(i) + 1;
            p.bucket[static_cast<std::size_t>(i)] = static_cast<Index>(p.bucket_hash(key) % static_cast<std::uint64_t>(s));
            p.sign[static_cast<std::size_t>(i)] = (p.sign_hash(key) & 1) ? 1.0 : -1.0;
        }
        return p;
    }

    Vector apply(const Vector& x) const {
        require_dims(x.size() == m, "count sketch: input has wrong length");
        Vector out = Vector::Zero(s);
        for (Index i = 0; i < m; ++i) {
            if (x[i] != 0.0) out[bucket[static_cast<std::size_t>(i)]] += sign[static_cast<std::size_t>(i)] * x[i];
        }
        return out;
    }

    Vector apply(const SparseVector& x) const {
        require_dims(x.size == m, "count sketch: input has wrong length");
        Vector out = Vector::Zero(s);
        for (std::size_t p = 0; p < x.index.size(); ++p) {
            const auto i = static_cast<std::size_t>(x.index[p]);
            out[bucket[i]] += sign[i] * x.value[p];
        }
        return out;
    }
};

// =============================================================================
// TensorSketch: S_{r,(i,j)} = sigma1(i) sigma2(j) 1[h1(i) + h2(j) = r mod s]
// =============================================================================

struct TensorSketchTransform {
    CountSketchParams first;
    CountSketchParams second;

    Index target_dim() const { return first.s; }
    Index left_dim() const { return first.m; }
    Index right_dim() const { return second.m; }
};

inline TensorSketchTransform make_tensor_sketch(Index m1, Index m2, Index s, std::uint64_t seed) {
    return {CountSketchParams::make(m1, s, derive_seed(seed, 11)),
            CountSketchParams::make(m2, s, derive_seed(seed, 12))};
}

inline TensorSketchTransform make_tensor_sketch(Index m, Index s, std::uint64_t seed) {
    return make_tensor_sketch(m, m, s, seed);
}

namespace detail {

/// Circular convolution of two length-s real vectors through the FFT.
inline Vector circular_convolve(const Vector& a, const Vector& b) {
    const Index s = a.size();
    if (s == 1) return Vector::Constant(1, a[0] * b[0]);
    thread_local Eigen::FFT<double> fft;
    std::vector<double> va(a.data(), a.data() + s), vb(b.data(), b.data() + s);
    std::vector<std::complex<double>> fa, fb;
    fft.fwd(fa, va);
    fft.fwd(fb, vb);
    for (std::size_t k = 0; k < fa.size(); ++k) fa[k] *= fb[k];
    std::vector<double> out;
    fft.inv(out, fa);
    Vector r(s);
    for (Index k = 0; k < s; ++k) r[k] = out[static_cast<std::size_t>(k)];
    return r;
}

}  // namespace detail

inline Vector ts_apply(const TensorSketchTransform& T, const Vector& x, const Vector& y) {
    require_dims(x.size() == T.left_dim() && y.size() == T.right_dim(), "ts_apply: input has wrong length");
    return detail::circular_convolve(T.first.apply(x), T.second.apply(y));
}

/// O(s log s + nnz(x) + nnz(y)).
inline Vector ts_apply(const TensorSketchTransform& T, const SparseVector& x, const SparseVector& y) {
    require_dims(x.size == T.left_dim() && y.size == T.right_dim(), "ts_apply: input has wrong length");
    return detail::circular_convolve(T.first.apply(x), T.second.apply(y));
}

inline constexpr Index materialize_limit = 1'000'000;

/// The definitional s x (m1 m2) matrix. Test-sized inputs only.
inline Matrix ts_materialize(const TensorSketchTransform& T) {
    const Index m1 = T.left_dim(), m2 = T.right_dim(), s = T.target_dim();
    require(m1 * m2 <= materialize_limit, ErrorCode::size_guard, "ts_materialize: m1*m2 exceeds 1e6");
    Matrix S = Matrix::Zero(s, m1 * m2);
    for (Index i = 0; i < m1; ++i) {
        for (Index j = 0; j < m2; ++j) {
            const auto ui = static_cast<std::size_t>(i), uj = static_cast<std::size_t>(j);
            const Index r = (T.first.bucket[ui] + T.second.bucket[uj]) % s;
            S(r, i * m2 + j) = T.first.sign[ui] * T.second.sign[uj];
        }
    }
    return S;
}

// =============================================================================
// TensorSRHT: S = (1/sqrt(s)) P (H D1 x H D2), pairs sampled with replacement
// =============================================================================

struct TensorSrhtTransform {
    Index m1 = 0, m2 = 0;          ///< logical input lengths
    Index m1_pad = 0, m2_pad = 0;  ///< padded to powers of two
    Vector d1, d2;                 ///< Rademacher diagonals
    std::vector<std::pair<Index, Index>> pairs;
    std::uint64_t seed = 0;

    Index target_dim() const { return static_cast<Index>(pairs.size()); }
    Index left_dim() const { return m1; }
    Index right_dim() const { return m2; }
};

inline TensorSrhtTransform make_tensor_srht(Index m1, Index m2, Index s, std::uint64_t seed) {
    require(m1 >= 1 && m2 >= 1 && s >= 1, ErrorCode::domain, "TensorSRHT needs m1, m2, s >= 1");
    TensorSrhtTransform T;
    T.m1 = m1;
    T.m2 = m2;
    T.m1_pad = next_power_of_two(m1);
    T.m2_pad = next_power_of_two(m2);
    T.seed = seed;
    Engine eng = make_engine(seed);
    T.d1.resize(T.m1_pad);
    T.d2.resize(T.m2_pad);
    for (Index i = 0; i < T.m1_pad; ++i) T.d1[i] = rademacher(eng);
    for (Index i = 0; i < T.m2_pad; ++i) T.d2[i] = rademacher(eng);
    T.pairs.resize(static_cast<std::size_t>(s));
    for (auto& [i, j] : T.pairs) {
        i = static_cast<Index>(uniform_index(eng, static_cast<std::uint64_t>(T.m1_pad)));
        j = static_cast<Index>(uniform_index(eng, static_cast<std::uint64_t>(T.m2_pad)));
    }
    return T;
}

inline TensorSrhtTransform make_tensor_srht(Index m, Index s, std::uint64_t seed) {
    return make_tensor_srht(m, m, s, seed);
}

namespace detail {

inline Vector signed_hadamard(const Vector& x, const Vector& signs) {
    Vector u = Vector::Zero(signs.size());
    u.head(x.size()) = x.cwiseProduct(signs.head(x.size()));
    return fwht(std::move(u));
}

}  // namespace detail

/// O(m log m + s).
inline Vector srht_apply(const TensorSrhtTransform& T, const Vector& x, const Vector& y) {
    require_dims(x.size() == T.m1 && y.size() == T.m2, "srht_apply: input has wrong length");
    const Vector u = detail::signed_hadamard(x, T.d1);
    const Vector v = detail::signed_hadamard(y, T.d2);
    const double scale = 1.0 / std::sqrt(static_cast<double>(T.target_dim()));
    Vector out(T.target_dim());
    for (std::size_t r = 0; r < T.pairs.size(); ++r) out[static_cast<Index>(r)] = scale * u[T.pairs[r].first] * v[T.pairs[r].second];
    return out;
}

inline Matrix srht_materialize(const TensorSrhtTransform& T) {
    require(T.m1 * T.m2 <= materialize_limit, ErrorCode::size_guard, "srht_materialize: m1*m2 exceeds 1e6");
    const double scale = 1.0 / std::sqrt(static_cast<double>(T.target_dim()));
    Matrix S(T.target_dim(), T.m1 * T.m2);
    for (std::size_t r = 0; r < T.pairs.size(); ++r) {
        const auto [pi, pj] = T.pairs[r];
        for (Index i = 0; i < T.m1; ++i) {
            const double left = hadamard_entry(static_cast<std::uint64_t>(pi), static_cast<std::uint64_t>(i)) * T.d1[i];
            for (Index j = 0; j < T.m2; ++j) {
                S(static_cast<Index>(r), i * T.m2 + j) =
                    scale * left * hadamard_entry(static_cast<std::uint64_t>(pj), static_cast<std::uint64_t>(j)) * T.d2[j];
            }
        }
    }
    return S;
}

// =============================================================================
// Variant dispatch and Jacobian sketching
// =============================================================================

enum class SketchVariant { tensor_srht, tensor_sketch };

using TensorTransform = std::variant<TensorSrhtTransform, TensorSketchTransform>;

inline TensorTransform make_tensor_transform(SketchVariant variant, Index m1, Index m2, Index s, std::uint64_t seed) {
    if (variant == SketchVariant::tensor_sketch) return make_tensor_sketch(m1, m2, s, seed);
    return make_tensor_srht(m1, m2, s, seed);
}

inline Index target_dim(const TensorTransform& T) {
    return std::visit([](const auto& t) { return t.target_dim(); }, T);
}

inline Vector sketch_apply(const TensorTransform& T, const Vector& x, const Vector& y) {
    if (const auto* ts = std::get_if<TensorSketchTransform>(&T)) return ts_apply(*ts, x, y);
    return srht_apply(std::get<TensorSrhtTransform>(T), x, y);
}

inline Matrix sketch_materialize(const TensorTransform& T) {
    if (const auto* ts = std::get_if<TensorSketchTransform>(&T)) return ts_materialize(*ts);
    return srht_materialize(std::get<TensorSrhtTransform>(T));
}

/// Row i of the result is apply(T, u_i, v_i); U and V hold u_i, v_i as columns.
inline Matrix sketch_jacobian(const Matrix& U, const Matrix& V, const TensorTransform& T) {
    require_dims(U.cols() == V.cols(), "sketch_jacobian: U and V need the same number of columns");
    Matrix out(U.cols(), target_dim(T));
    parallel_for(U.cols(), [&](Index i) { out.row(i) = sketch_apply(T, U.col(i), V.col(i)).transpose(); });
    return out;
}

/// Explicit n x (m1 m2) Jacobian with rows vec(u_i v_i^T) in the tensor order above.
inline Matrix materialize_jacobian(const Matrix& U, const Matrix& V) {
    require_dims(U.cols() == V.cols(), "materialize_jacobian: U and V need the same number of columns");
    require(U.rows() * V.rows() <= 16 * materialize_limit, ErrorCode::size_guard, "materialize_jacobian: too large");
    Matrix J(U.cols(), U.rows() * V.rows());
    for (Index i = 0; i < U.cols(); ++i) {
        for (Index a = 0; a < U.rows(); ++a) J.block(i, a * V.rows(), 1, V.rows()) = U(a, i) * V.col(i).transpose();
    }
    return J;
}

// =============================================================================
// SRHT subspace embedding: S = (1/sqrt(s2)) P H D on zero-padded columns.
// Rows are sampled without replacement; when s2 >= N_pad every row is kept and
// S is exactly orthogonal (scaled by 1/sqrt(N_pad)).
// =============================================================================

struct SubspaceEmbedTransform {
    Index N = 0;
    Index N_pad = 0;
    Vector signs;
    std::vector<Index> rows;
    double scale = 1.0;
    std::uint64_t seed = 0;

    Index target_dim() const { return static_cast<Index>(rows.size()); }
    bool exact() const { return target_dim() == N_pad; }
};

inline SubspaceEmbedTransform make_subspace_embed(Index N, Index s2, std::uint64_t seed) {
    require(N >= 1 && s2 >= 1, ErrorCode::domain, "subspace embedding needs N, s2 >= 1");
    SubspaceEmbedTransform E;
    E.N = N;
    E.N_pad = next_power_of_two(N);
    E.seed = seed;
    Engine eng = make_engine(seed);
    E.signs.resize(E.N_pad);
    for (Index i = 0; i < E.N_pad; ++i) E.signs[i] = rademacher(eng);
    const Index keep = std::min(s2, E.N_pad);
    std::vector<Index> perm(static_cast<std::size_t>(E.N_pad));
    for (Index i = 0; i < E.N_pad; ++i) perm[static_cast<std::size_t>(i)] = i;
    // partial Fisher-Yates
    for (Index i = 0; i < keep; ++i) {
        const auto j = i + static_cast<Index>(uniform_index(eng, static_cast<std::uint64_t>(E.N_pad - i)));
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    E.rows.assign(perm.begin(), perm.begin() + keep);
    std::sort(E.rows.begin(), E.rows.end());
    E.scale = 1.0 / std::sqrt(static_cast<double>(keep));
    return E;
}

inline Matrix embed_apply(const SubspaceEmbedTransform& E, const Matrix& M) {
    require_dims(M.rows() == E.N, "embed_apply: M has the wrong number of rows");
    require(M.cols() <= E.target_dim(), ErrorCode::domain, "embed_apply: target dimension smaller than column count");
    Matrix out(E.target_dim(), M.cols());
    for (Index c = 0; c < M.cols(); ++c) {
        Vector col = detail::signed_hadamard(M.col(c), E.signs);
        for (Index r = 0; r < E.target_dim(); ++r) out(r, c) = E.scale * col[E.rows[static_cast<std::size_t>(r)]];
    }
    return out;
}

}  // namespace subquad

#endif  // SUBQUAD_SKETCH_HPP
