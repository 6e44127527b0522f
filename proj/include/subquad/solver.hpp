#ifndef SUBQUAD_SOLVER_HPP
#define SUBQUAD_SOLVER_HPP

// Sketch-preconditioned solvers for normal-equation systems A^T A x = y and
// for the Gram system J J^T x = c with rank-one Jacobian rows vec(u_i v_i^T).
//
// Both follow the same scheme: embed, take a pivoted QR of the embedded matrix
// to get R with (S A) R orthonormal, then iterate
//     z <- z - eta * M (M z - R^T y),   M = R^T (A^T A) R,
// and return x = R z. With a good embedding M is close to the identity and
// eta = 1 recovers the plain update; eta = 2 / (lmax^2 + lmin^2) is used in
// general so the iteration also contracts when the embedding is loose.

#include "subquad/common.hpp"
#include "subquad/sketch.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <chrono>
#include <limits>

namespace subquad {

struct RegressionReport {
    Vector solution;
    int iterations = 0;
    double final_residual = 0.0;            ///< ||G x - y|| (absolute)
    double preconditioner_cond_estimate = 1.0;
    std::vector<double> residual_history;   ///< ||G x_t - y|| per iterate, starting at t = 0
    std::vector<double> preconditioned_history;  ///< ||M z_t - R^T y||, non-increasing
};

class NoConvergenceError : public Error {
public:
    explicit NoConvergenceError(RegressionReport report)
        : Error(ErrorCode::no_convergence, "iteration cap reached with residual " + std::to_string(report.final_residual)),
          report_(std::move(report)) {}

    const RegressionReport& report() const noexcept { return report_; }

private:
    RegressionReport report_;
};

inline int default_iteration_cap(double eps) {
    return 10 * static_cast<int>(std::ceil(std::log2(1.0 / eps))) + 50;
}

// =============================================================================
// Dense Gram helpers
// =============================================================================

/// G = (U^T U) o (V^T V): the Gram matrix of rows vec(u_i v_i^T).
inline Matrix gram_exact(const Matrix& U, const Matrix& V) {
    require_dims(U.cols() == V.cols(), "gram_exact: U and V need the same number of columns");
    Matrix uu = U.transpose() * U;
    Matrix vv = V.transpose() * V;
    return uu.cwiseProduct(vv);
}

/// Cholesky solve with one jitter retry and iterative refinement; guarantees
/// ||G x - c|| <= 1e-10 ||c|| or throws SingularGram.
inline Vector gram_solve_direct(const Matrix& G, const Vector& c) {
    require_dims(G.rows() == G.cols() && G.rows() == c.size(), "gram_solve_direct: shape mismatch");
    const double cn = c.norm();
    if (cn == 0.0) return Vector::Zero(c.size());
    Eigen::LLT<Matrix> llt(G);
    if (llt.info() != Eigen::Success) {
        const double jitter = 1e-14 * std::max(1.0, G.diagonal().cwiseAbs().maxCoeff());
        llt.compute(G + jitter * Matrix::Identity(G.rows(), G.cols()));
        if (llt.info() != Eigen::Success) throw Error(ErrorCode::singular_gram, "Gram matrix is not positive definite");
    }
    Vector x = llt.solve(c);
    for (int pass = 0; pass < 3; ++pass) {
        const Vector r = c - G * x;
        if (r.norm() <= 1e-10 * cn) return x;
        x += llt.solve(r);
    }
    if ((G * x - c).norm() > 1e-10 * cn) throw Error(ErrorCode::singular_gram, "Gram system too ill-conditioned for 1e-10 residual");
    return x;
}

// =============================================================================
// Shared preconditioned iteration
// =============================================================================

namespace detail {

/// Returns P R_f^{-1} from a column-pivoted QR of the embedded matrix B.
inline Matrix preconditioner_from_embedding(const Matrix& B) {
    const Index k = B.cols();
    Eigen::ColPivHouseholderQR<Matrix> qr(B);
    const Matrix Rf = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
    const double tol = static_cast<double>(k) * std::numeric_limits<double>::epsilon() * B.cwiseAbs().maxCoeff();
    for (Index i = 0; i < k; ++i) {
        if (!(std::abs(Rf(i, i)) > tol)) throw Error(ErrorCode::rank_deficient, "embedded matrix is rank deficient");
    }
    Matrix Rinv = Rf.triangularView<Eigen::Upper>().solve(Matrix::Identity(k, k));
    return qr.colsPermutation() * Rinv;
}

/// Minimizes ||Gop R z - rhs|| by the damped normal-equation update.
inline RegressionReport preconditioned_descent(const Matrix& Gop, const Matrix& R, const Vector& rhs, double tol,
                                               int iter_cap) {
    RegressionReport rep;
    const Matrix M = R.transpose() * Gop * R;
    const Matrix Msym = 0.5 * (M + M.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> es(Msym, Eigen::EigenvaluesOnly);
    const double lmin = es.eigenvalues().minCoeff();
    const double lmax = es.eigenvalues().maxCoeff();
    rep.preconditioner_cond_estimate = lmin > 0.0 ? lmax / lmin : std::numeric_limits<double>::infinity();
    const double eta = 2.0 / (lmax * lmax + lmin * lmin);
    const Vector Rty = R.transpose() * rhs;

    Vector z = Vector::Zero(R.cols());
    Vector x = Vector::Zero(R.rows());
    double resid = rhs.norm();
    Vector pre = -Rty;
    rep.residual_history.push_back(resid);
    rep.preconditioned_history.push_back(pre.norm());
    while (resid > tol && rep.iterations < iter_cap) {
        z.noalias() -= eta * (Msym * pre);
        pre.noalias() = Msym * z - Rty;
        x.noalias() = R * z;
        resid = (Gop * x - rhs).norm();
        ++rep.iterations;
        rep.residual_history.push_back(resid);
        rep.preconditioned_history.push_back(pre.norm());
    }
    rep.solution = std::move(x);
    rep.final_residual = resid;
    if (resid > tol) throw NoConvergenceError(std::move(rep));
    return rep;
}

inline void require_epsilon(double eps) {
    require(eps > 0.0 && eps < 0.5, ErrorCode::domain, "epsilon must lie in (0, 1/2)");
}

}  // namespace detail

// =============================================================================
// Generic normal-equation solver
// =============================================================================

struct FastRegressionOptions {
    double epsilon = 1e-6;
    int iter_cap = 0;        ///< 0: default_iteration_cap(epsilon)
    Index embed_dim = 0;     ///< 0: max(2k, 4 (k + ln N) ceil(ln k))
    std::uint64_t seed = 0;
};

inline Index default_embed_dim(Index k, Index N) {
    const double logk = std::ceil(std::log(static_cast<double>(std::max<Index>(k, 1))));
    const auto s = static_cast<Index>(std::ceil(4.0 * (static_cast<double>(k) + std::log(static_cast<double>(N))) * logk));
    return std::max<Index>(2 * k, s);
}

/// Solves A^T A x = y to ||A^T A x - y|| <= eps ||y||. A must have full column rank.
inline RegressionReport fast_regression(const Matrix& A, const Vector& y, const FastRegressionOptions& opts = {}) {
    detail::require_epsilon(opts.epsilon);
    const Index N = A.rows(), k = A.cols();
    require_dims(y.size() == k, "fast_regression: y must have one entry per column of A");
    require(N >= k && k >= 1, ErrorCode::domain, "fast_regression needs N >= k >= 1");
    if (y.norm() == 0.0) {
        RegressionReport rep;
        rep.solution = Vector::Zero(k);
        rep.residual_history.push_back(0.0);
        rep.preconditioned_history.push_back(0.0);
        return rep;
    }
    const Index s2 = opts.embed_dim > 0 ? opts.embed_dim : default_embed_dim(k, N);
    const auto E = make_subspace_embed(N, s2, derive_seed(opts.seed, 21));
    const Matrix R = detail::preconditioner_from_embedding(embed_apply(E, A));
    const Matrix AtA = A.transpose() * A;
    const int cap = opts.iter_cap > 0 ? opts.iter_cap : default_iteration_cap(opts.epsilon);
    return detail::preconditioned_descent(AtA, R, y, opts.epsilon * y.norm(), cap);
}

// =============================================================================
// Gram regression over rank-one rows
// =============================================================================

/// Which Gram operator drives the iteration and its stopping rule.
///   exact:    G = (U^T U) o (V^T V), formed in O(n^2 m); the sketch only builds R.
///   sketched: G~ = J~ J~^T from the tensor sketch, as in the textbook loop.
enum class GramAction { exact, sketched };

struct TensorRegressionOptions {
    double epsilon = 1e-6;
    double delta = 0.01;
    int iter_cap = 0;                 ///< 0: default_iteration_cap(epsilon)
    SketchVariant variant = SketchVariant::tensor_srht;
    Index s1 = 0;                     ///< 0: 4 n ceil(ln(n m / delta))
    Index s2 = 0;                     ///< 0: max(2n, 4 (n + ln m) ceil(ln n))
    GramAction action = GramAction::exact;
    std::uint64_t seed = 0;
};

inline Index default_tensor_sketch_dim(Index n, Index m, double delta) {
    const double lg = std::ceil(std::log(static_cast<double>(n) * static_cast<double>(m) / delta));
    return std::max<Index>(n, static_cast<Index>(4.0 * static_cast<double>(n) * lg));
}

inline Index default_preconditioner_dim(Index n, Index m) {
    const double logn = std::ceil(std::log(static_cast<double>(std::max<Index>(n, 1))));
    const auto s = static_cast<Index>(std::ceil(4.0 * (static_cast<double>(n) + std::log(static_cast<double>(m))) * logn));
    return std::max<Index>(2 * n, s);
}

struct TensorRegressionResult {
    RegressionReport report;
    Index s1 = 0;
    Index s2 = 0;
    double sketch_seconds = 0.0;
};

/// Solves J J^T x = c for J with rows vec(u_i v_i^T), columns of U and V.
/// The stopping tolerance is eps / 1.5 on the selected Gram operator.
inline TensorRegressionResult fast_tensor_regression_detailed(const Matrix& U, const Matrix& V, const Vector& c,
                                                              const TensorRegressionOptions& opts = {}) {
    detail::require_epsilon(opts.epsilon);
    require(opts.delta > 0.0 && opts.delta < 1.0, ErrorCode::domain, "delta must lie in (0, 1)");
    const Index n = U.cols();
    require_dims(V.cols() == n && c.size() == n && n >= 1, "fast_tensor_regression: need n columns in U, V and n entries in c");
    TensorRegressionResult out;
    if (c.norm() == 0.0) {
        out.report.solution = Vector::Zero(n);
        out.report.residual_history.push_back(0.0);
        out.report.preconditioned_history.push_back(0.0);
        return out;
    }
    const Index m = std::max(U.rows(), V.rows());
    out.s1 = opts.s1 > 0 ? opts.s1 : default_tensor_sketch_dim(n, m, opts.delta);
    out.s2 = opts.s2 > 0 ? opts.s2 : default_preconditioner_dim(n, m);

    const auto t0 = std::chrono::steady_clock::now();
    const TensorTransform T = make_tensor_transform(opts.variant, U.rows(), V.rows(), out.s1, derive_seed(opts.seed, 31));
    const Matrix Jt = sketch_jacobian(U, V, T);
    out.sketch_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (Jt.cols() < n) throw Error(ErrorCode::rank_deficient, "tensor sketch dimension below n");
    const auto E = make_subspace_embed(Jt.cols(), std::max(out.s2, n), derive_seed(opts.seed, 32));
    const Matrix R = detail::preconditioner_from_embedding(embed_apply(E, Jt.transpose()));
    const Matrix G = opts.action == GramAction::exact ? gram_exact(U, V) : Matrix(Jt * Jt.transpose());
    const int cap = opts.iter_cap > 0 ? opts.iter_cap : default_iteration_cap(opts.epsilon);
    out.report = detail::preconditioned_descent(G, R, c, opts.epsilon / 1.5 * c.norm(), cap);
    return out;
}

inline RegressionReport fast_tensor_regression(const Matrix& U, const Matrix& V, const Vector& c,
                                               const TensorRegressionOptions& opts = {}) {
    return fast_tensor_regression_detailed(U, V, c, opts).report;
}

}  // namespace subquad

#endif  // SUBQUAD_SOLVER_HPP
