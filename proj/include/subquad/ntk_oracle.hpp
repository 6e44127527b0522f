#ifndef SUBQUAD_NTK_ORACLE_HPP
#define SUBQUAD_NTK_ORACLE_HPP

// Infinite-width NTK kernels and exact finite-width Jacobian / Gram oracles.
//
// Kernel recursion (covariance 2 Sigma at every layer):
//   K_0 = X^T X
//   K_l = E[phi(x1) phi(x2)],   l < L
//   K_L = E[phi'(x1) phi'(x2)]
// The closed form exists for plain ReLU (b = 0); shifted ReLU goes through
// the Monte-Carlo evaluator.

#include "subquad/common.hpp"
#include "subquad/net_core.hpp"
#include "subquad/solver.hpp"

#include <Eigen/Eigenvalues>

namespace subquad {

/// F(theta) = (sin theta + (pi - theta) cos theta) / (2 pi), theta in [0, pi].
inline double f_theta(double theta) {
    require(theta >= 0.0 && theta <= std::numbers::pi, ErrorCode::domain, "f_theta: theta must lie in [0, pi]");
    return (std::sin(theta) + (std::numbers::pi - theta) * std::cos(theta)) / (2.0 * std::numbers::pi);
}

/// P(x1 > 0, x2 > 0) for a centred Gaussian pair with correlation rho.
inline double relu_prime_corr(double rho) {
    require(rho >= -1.0 && rho <= 1.0, ErrorCode::domain, "relu_prime_corr: rho must lie in [-1, 1]");
    return 0.25 + std::asin(rho) / (2.0 * std::numbers::pi);
}

namespace detail {

inline double clamp_unit(double c) { return std::clamp(c, -1.0, 1.0); }

inline void require_unit_columns(const Matrix& X) {
    for (Index i = 0; i < X.cols(); ++i) require_unit(X.col(i));
}

}  // namespace detail

inline double min_eigenvalue(const Matrix& G) {
    require_dims(G.rows() == G.cols(), "min_eigenvalue: matrix must be square");
    if (G.size() == 0) throw Error(ErrorCode::domain, "min_eigenvalue: empty matrix");
    const double scale = std::max(1.0, G.cwiseAbs().maxCoeff());
    if ((G - G.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
        throw Error(ErrorCode::domain, "min_eigenvalue: matrix is not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> es(G, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

struct KernelStack {
    std::vector<Matrix> K;   ///< K_0 .. K_L
    double lambda_L = 0.0;   ///< lambda_min(K_L)

    int layers() const { return static_cast<int>(K.size()) - 1; }
    const Matrix& last() const { return K.back(); }
};

/// Closed-form kernels for b = 0. X holds unit columns.
inline KernelStack ntk_kernels(const Matrix& X, int L) {
    require(L >= 1, ErrorCode::domain, "ntk_kernels: L must be >= 1");
    detail::require_unit_columns(X);
    const Index n = X.cols();
    KernelStack ks;
    ks.K.push_back(X.transpose() * X);
    for (int l = 1; l <= L; ++l) {
        const Matrix& prev = ks.K.back();
        Matrix next(n, n);
        for (Index i = 0; i < n; ++i) {
            for (Index j = i; j < n; ++j) {
                const double diag = std::sqrt(prev(i, i) * prev(j, j));
                const double rho = detail::clamp_unit(prev(i, j) / diag);
                const double v = l < L ? 2.0 * diag * f_theta(std::acos(rho)) : relu_prime_corr(rho);
                next(i, j) = next(j, i) = v;
            }
        }
        ks.K.push_back(std::move(next));
    }
    ks.lambda_L = min_eigenvalue(ks.last());
    return ks;
}

struct MonteCarloKernelStack {
    KernelStack kernels;
    std::vector<Matrix> standard_error;  ///< per entry, same layout as K (zero for K_0)
};

/// Monte-Carlo kernels for the sqrt(c_b)-scaled shifted ReLU (threshold sqrt(2) b
/// in the width-free scaling). Every entry reuses one sample stream per pair, so
/// the result is exactly symmetric. Each layer uses the previous estimate as Sigma.
inline MonteCarloKernelStack ntk_kernels_mc(const Matrix& X, int L, double b, Index samples, std::uint64_t seed = 0) {
    require(L >= 1, ErrorCode::domain, "ntk_kernels_mc: L must be >= 1");
    require(samples >= 10'000, ErrorCode::domain, "ntk_kernels_mc: need at least 1e4 samples");
    detail::require_unit_columns(X);
    const Index n = X.cols();
    const double cb = shift_scale(b);
    const double tau = std::numbers::sqrt2 * b;
    MonteCarloKernelStack out;
    out.kernels.K.push_back(X.transpose() * X);
    out.standard_error.push_back(Matrix::Zero(n, n));
    for (int l = 1; l <= L; ++l) {
        const Matrix& prev = out.kernels.K.back();
        Matrix next(n, n), se(n, n);
        const bool last = l == L;
        for (Index i = 0; i < n; ++i) {
            for (Index j = i; j < n; ++j) {
                const double si = std::sqrt(2.0 * prev(i, i)), sj = std::sqrt(2.0 * prev(j, j));
                const double rho = detail::clamp_unit(prev(i, j) / std::sqrt(prev(i, i) * prev(j, j)));
                const double tail = std::sqrt(std::max(0.0, 1.0 - rho * rho));
                Engine eng = make_engine(derive_seed(seed, static_cast<std::uint64_t>(l), static_cast<std::uint64_t>(i),
                                                     static_cast<std::uint64_t>(j)));
                boost::random::normal_distribution<double> normal;
                double sum = 0.0, sumsq = 0.0;
                for (Index k = 0; k < samples; ++k) {
                    const double z1 = normal(eng), z2 = normal(eng);
                    const double x1 = si * z1;
                    const double x2 = sj * (rho * z1 + tail * z2);
                    double v = 0.0;
                    if (x1 > tau && x2 > tau) v = last ? cb : cb * x1 * x2;
                    sum += v;
                    sumsq += v * v;
                }
                const auto ns = static_cast<double>(samples);
                const double mean = sum / ns;
                const double var = std::max(0.0, sumsq / ns - mean * mean);
                next(i, j) = next(j, i) = mean;
                se(i, j) = se(j, i) = std::sqrt(var / (ns - 1.0));
            }
        }
        out.kernels.K.push_back(std::move(next));
        out.standard_error.push_back(std::move(se));
    }
    out.kernels.lambda_L = min_eigenvalue(out.kernels.last());
    return out;
}

// =============================================================================
// Finite-width oracles
// =============================================================================

struct JacobianFactors {
    Matrix U;  ///< column i: u_{i,l}
    Matrix V;  ///< column i: v_{i,l} = h_{i,l-1} (x_i at l = 1)
};

/// Dense right-to-left evaluation of u_{i,l} = D_{i,l} (prod_{k>l} W_k^T D_{i,k}) a.
/// Row i of J_l is vec(u_{i,l} v_{i,l}^T).
inline JacobianFactors exact_jacobian_uv(const Weights& w, const Matrix& X, const std::vector<ForwardCache>& caches, int l) {
    const int L = w.layers();
    require(l >= 1 && l <= L, ErrorCode::domain, "exact_jacobian_uv: layer out of range");
    require_dims(static_cast<Index>(caches.size()) == X.cols(), "exact_jacobian_uv: one cache per input column");
    const Index n = X.cols(), m = w.width();
    JacobianFactors jf;
    jf.U.resize(m, n);
    jf.V.resize(l == 1 ? w.input_dim() : m, n);
    auto apply_mask = [&](const ActivationMask& mask, const Vector& z) {
        Vector out = Vector::Zero(m);
        for (Index j : mask.active) out[j] = mask.scale * z[j];
        return out;
    };
    for (Index i = 0; i < n; ++i) {
        const auto& layers = caches[static_cast<std::size_t>(i)].layers;
        Vector z = apply_mask(layers[static_cast<std::size_t>(L - 1)].mask, w.a);
        for (int k = L; k > l; --k) {
            Vector back = w.W[static_cast<std::size_t>(k - 1)].transpose() * z;
            z = apply_mask(layers[static_cast<std::size_t>(k - 2)].mask, back);
        }
        jf.U.col(i) = z;
        jf.V.col(i) = l == 1 ? Vector(X.col(i)) : layers[static_cast<std::size_t>(l - 2)].h.to_dense();
    }
    return jf;
}

inline Matrix exact_gram(const Weights& w, const Matrix& X, const std::vector<ForwardCache>& caches, int l) {
    const JacobianFactors jf = exact_jacobian_uv(w, X, caches, l);
    return gram_exact(jf.U, jf.V);
}

inline std::vector<ForwardCache> forward_all(const Weights& w, const Matrix& X) {
    std::vector<ForwardCache> caches(static_cast<std::size_t>(X.cols()));
    for (Index i = 0; i < X.cols(); ++i) require_unit(X.col(i));
    parallel_for(X.cols(), [&](Index i) { caches[static_cast<std::size_t>(i)] = forward(w, X.col(i)); });
    return caches;
}

/// Finite-width counterparts H_0 .. H_L of K_0 .. K_L:
///   H_l = [h_{i,l}^T h_{j,l}] for l < L,   H_L = [(1/m) sum_r D_{i,L,rr} D_{j,L,rr}].
inline std::vector<Matrix> finite_width_kernels(const Weights& w, const Matrix& X, const std::vector<ForwardCache>& caches) {
    const int L = w.layers();
    const Index n = X.cols();
    const auto md = static_cast<double>(w.width());
    std::vector<Matrix> H;
    H.push_back(X.transpose() * X);
    for (int l = 1; l <= L; ++l) {
        Matrix Hl(n, n);
        for (Index i = 0; i < n; ++i) {
            for (Index j = i; j < n; ++j) {
                const auto& ci = caches[static_cast<std::size_t>(i)].layers[static_cast<std::size_t>(l - 1)];
                const auto& cj = caches[static_cast<std::size_t>(j)].layers[static_cast<std::size_t>(l - 1)];
                double v;
                if (l < L) {
                    v = dot(ci.h, cj.h);
                } else {
                    std::vector<Index> common;
                    std::set_intersection(ci.mask.active.begin(), ci.mask.active.end(), cj.mask.active.begin(),
                                          cj.mask.active.end(), std::back_inserter(common));
                    v = static_cast<double>(common.size()) * ci.mask.scale * cj.mask.scale / md;
                }
                Hl(i, j) = Hl(j, i) = v;
            }
        }
        H.push_back(std::move(Hl));
    }
    return H;
}

}  // namespace subquad

#endif  // SUBQUAD_NTK_ORACLE_HPP
