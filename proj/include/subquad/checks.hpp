#ifndef SUBQUAD_CHECKS_HPP
#define SUBQUAD_CHECKS_HPP

// Statistical check suites driven by `subquad check`. Every check prints
//   check=<name> status=<pass|fail> value=<statistic> limit=<threshold> [extra]
// and a suite passes iff all of its checks pass.

#include "subquad/io.hpp"
#include "subquad/lrm.hpp"
#include "subquad/ntk_oracle.hpp"
#include "subquad/sketch.hpp"
#include "subquad/solver.hpp"

#include <Eigen/SVD>

namespace subquad {

struct CheckResult {
    std::string name;
    bool pass = false;
    double value = 0.0;
    double limit = 0.0;
    std::string extra;
};

inline std::string format_check(const CheckResult& r) {
    std::string s = "check=" + r.name + " status=" + (r.pass ? "pass" : "fail") + " value=" + format_double(r.value) +
                    " limit=" + format_double(r.limit);
    if (!r.extra.empty()) s += " " + r.extra;
    return s;
}

inline Matrix gaussian_matrix(Index rows, Index cols, Engine& eng, double sd = 1.0) {
    boost::random::normal_distribution<double> normal(0.0, sd);
    Matrix M(rows, cols);
    for (Index k = 0; k < M.size(); ++k) M.data()[k] = normal(eng);
    return M;
}

inline Matrix unit_columns(Index d, Index n, Engine& eng) {
    Matrix X = gaussian_matrix(d, n, eng);
    X.colwise().normalize();
    return X;
}

// =============================================================================
// lrm
// =============================================================================

struct LrmSequenceStats {
    double max_rel_error = 0.0;
    std::size_t min_flushes = std::numeric_limits<std::size_t>::max();
};

/// Random update/query/flush sequences checked against a dense accumulator.
inline LrmSequenceStats lrm_sequence_check(int sequences, Index max_m, std::uint64_t seed) {
    LrmSequenceStats st;
    for (int q = 0; q < sequences; ++q) {
        Engine eng = make_engine(derive_seed(seed, 41, static_cast<std::uint64_t>(q)));
        const Index m = 4 + static_cast<Index>(uniform_index(eng, static_cast<std::uint64_t>(max_m - 3)));
        const Index threshold = 2 + static_cast<Index>(uniform_index(eng, 7));
        Weights w;
        w.W = {gaussian_matrix(m, m, eng), gaussian_matrix(m, m, eng)};
        w.a = Vector::Ones(m);
        LowRankState st_lrm(w, threshold);
        Matrix dense = w.W[1];
        auto rel = [](const Vector& got, const Vector& want) {
            return (got - want).norm() / std::max(want.norm(), 1e-300);
        };
        for (int op = 0; op < 40 || st_lrm.flush_count(2) < 3; ++op) {
            const auto kind = uniform_index(eng, 5);
            if (kind <= 1) {
                const Index r = 1 + static_cast<Index>(uniform_index(eng, 3));
                Matrix U = gaussian_matrix(m, r, eng), V = gaussian_matrix(m, r, eng);
                dense.noalias() += U * V.transpose();
                st_lrm.update(2, std::move(U), std::move(V));
            } else if (kind == 2) {
                const Vector y = gaussian_matrix(m, 1, eng);
                st.max_rel_error = std::max({st.max_rel_error, rel(st_lrm.query(2, y), dense * y),
                                             rel(st_lrm.query_transpose(2, y), dense.transpose() * y)});
            } else if (kind == 3) {
                Vector y = gaussian_matrix(m, 1, eng);
                for (Index k = 0; k < m; ++k)
                    if (uniform01(eng) < 0.7) y[k] = 0.0;
                const SparseVector ys = SparseVector::from_dense(y);
                st.max_rel_error = std::max({st.max_rel_error, rel(st_lrm.query(2, ys), dense * y),
                                             rel(st_lrm.query_transpose(2, ys), dense.transpose() * y)});
            } else {
                st_lrm.flush(2);
            }
            if (st_lrm.rank(2) >= threshold) st.max_rel_error = std::numeric_limits<double>::infinity();
        }
        st.max_rel_error = std::max(st.max_rel_error, relative_error(st_lrm.dense(2), dense));
        st.min_flushes = std::min(st.min_flushes, st_lrm.flush_count(2));
    }
    return st;
}

inline std::vector<CheckResult> check_lrm(std::uint64_t seed) {
    const auto st = lrm_sequence_check(200, 256, seed);
    return {
        {"lrm_oracle_rel_error", st.max_rel_error <= 1e-10, st.max_rel_error, 1e-10, "sequences=200"},
        {"lrm_min_flushes", st.min_flushes >= 3, static_cast<double>(st.min_flushes), 3.0, ""},
    };
}

// =============================================================================
// sketch
// =============================================================================

/// Max |fast - materialized| over random (m <= 16, s <= 32) instances.
inline double sketch_definitional_error(SketchVariant variant, int seeds, std::uint64_t seed) {
    double err = 0.0;
    for (int q = 0; q < seeds; ++q) {
        Engine eng = make_engine(derive_seed(seed, 51, static_cast<std::uint64_t>(q), static_cast<std::uint64_t>(variant)));
        const Index m1 = 1 + static_cast<Index>(uniform_index(eng, 16));
        const Index m2 = 1 + static_cast<Index>(uniform_index(eng, 16));
        const Index s = 1 + static_cast<Index>(uniform_index(eng, 32));
        const TensorTransform T = make_tensor_transform(variant, m1, m2, s, eng());
        const Matrix S = sketch_materialize(T);
        const Vector x = gaussian_matrix(m1, 1, eng), y = gaussian_matrix(m2, 1, eng);
        Vector xy(m1 * m2);
        for (Index i = 0; i < m1; ++i)
            for (Index j = 0; j < m2; ++j) xy[i * m2 + j] = x[i] * y[j];
        err = std::max(err, (sketch_apply(T, x, y) - S * xy).cwiseAbs().maxCoeff());
    }
    return err;
}

/// max_i |sigma_i(S Q) - 1| for Q an orthonormal basis of the row space of J,
/// computed as S J^T R_q^{-1} with J^T = Q R_q.
inline double row_space_distortion(const Matrix& U, const Matrix& V, const TensorTransform& T) {
    const Matrix Jt = materialize_jacobian(U, V).transpose();
    Eigen::HouseholderQR<Matrix> qr(Jt);
    const Index n = U.cols();
    const Matrix Rq = qr.matrixQR().topLeftCorner(n, n).triangularView<Eigen::Upper>();
    const Matrix SJt = sketch_jacobian(U, V, T).transpose();
    const Matrix SQ = Rq.transpose().triangularView<Eigen::Lower>().solve(SJt.transpose()).transpose();
    const Vector sv = Eigen::JacobiSVD<Matrix>(SQ).singularValues();
    return std::max(std::abs(sv.maxCoeff() - 1.0), std::abs(sv.minCoeff() - 1.0));
}

struct DistortionStats {
    int within = 0;
    int trials = 0;
    double median = 0.0;
};

inline DistortionStats embedding_distortion_trials(Index n, Index m, Index s, double limit, int trials, std::uint64_t seed) {
    Engine eng = make_engine(derive_seed(seed, 52));
    const Matrix U = gaussian_matrix(m, n, eng), V = gaussian_matrix(m, n, eng);
    DistortionStats st;
    st.trials = trials;
    std::vector<double> ds;
    for (int q = 0; q < trials; ++q) {
        const TensorTransform T = make_tensor_transform(SketchVariant::tensor_srht, m, m, s, derive_seed(seed, 53, static_cast<std::uint64_t>(q)));
        const double d = row_space_distortion(U, V, T);
        ds.push_back(d);
        if (d <= limit) ++st.within;
    }
    st.median = median(ds);
    return st;
}

inline std::vector<CheckResult> check_sketch(std::uint64_t seed) {
    std::vector<CheckResult> out;
    const double e_srht = sketch_definitional_error(SketchVariant::tensor_srht, 50, seed);
    const double e_ts = sketch_definitional_error(SketchVariant::tensor_sketch, 50, seed);
    out.push_back({"srht_definitional", e_srht <= 1e-12, e_srht, 1e-12, "seeds=50"});
    out.push_back({"tensorsketch_definitional", e_ts <= 1e-12, e_ts, 1e-12, "seeds=50"});
    const auto st = embedding_distortion_trials(8, 64, 1024, 0.25, 100, seed);
    out.push_back({"srht_row_space_distortion", st.within >= 95, static_cast<double>(st.within), 95.0,
                   "median=" + format_double(st.median)});
    return out;
}

// =============================================================================
// ntk
// =============================================================================

inline double max_abs_diff(const Matrix& A, const Matrix& B) { return (A - B).cwiseAbs().maxCoeff(); }

inline std::vector<CheckResult> check_ntk(std::uint64_t seed, const std::optional<TrainConfig>& cfg = std::nullopt) {
    if (cfg && cfg->lambda_mode == LambdaMode::ntk_closed_form && cfg->net.b > 0.0)
        throw Error(ErrorCode::config, "closed-form NTK check needs b = 0");
    std::vector<CheckResult> out;
    Engine eng = make_engine(derive_seed(seed, 61));

    {   // Monte Carlo vs closed form, n = 2, L = 2
        const Matrix X = unit_columns(4, 2, eng);
        const KernelStack ks = ntk_kernels(X, 2);
        const auto mc = ntk_kernels_mc(X, 2, 0.0, 1'000'000, seed);
        double worst = 0.0;
        for (int l = 1; l <= 2; ++l)
            for (Index i = 0; i < 2; ++i)
                for (Index j = 0; j < 2; ++j) {
                    const double se = std::max(mc.standard_error[static_cast<std::size_t>(l)](i, j), 1e-15);
                    worst = std::max(worst, std::abs(mc.kernels.K[static_cast<std::size_t>(l)](i, j) - ks.K[static_cast<std::size_t>(l)](i, j)) / se);
                }
        out.push_back({"ntk_mc_vs_closed_form_se", worst <= 3.0, worst, 3.0, "samples=1e6"});
    }

    {   // finite-width convergence, n = 6, L = 2
        const Matrix X = unit_columns(6, 6, eng);
        const KernelStack ks = ntk_kernels(X, 2);
        std::vector<double> med;
        for (Index m : {Index{256}, Index{1024}, Index{4096}}) {
            std::vector<double> errs;
            for (int q = 0; q < 20; ++q) {
                const Weights w = init_network({6, m, 2, 0.0, derive_seed(seed, 62, static_cast<std::uint64_t>(q))});
                const auto H = finite_width_kernels(w, X, forward_all(w, X));
                double e = 0.0;
                for (int l = 1; l <= 2; ++l) e = std::max(e, max_abs_diff(H[static_cast<std::size_t>(l)], ks.K[static_cast<std::size_t>(l)]));
                errs.push_back(e);
            }
            med.push_back(median(errs));
        }
        const bool decreasing = med[0] > med[1] && med[1] > med[2];
        const double ratio = med[2] / med[0];
        out.push_back({"ntk_finite_width_ratio", decreasing && ratio <= 0.7, ratio, 0.7,
                       "median256=" + format_double(med[0]) + " median1024=" + format_double(med[1]) +
                           " median4096=" + format_double(med[2])});
    }

    {   // eigenvalue floor at init, m = 4096
        const Matrix X = unit_columns(6, 6, eng);
        const double lam = ntk_kernels(X, 2).lambda_L;
        int ok = 0;
        for (int q = 0; q < 20; ++q) {
            const Weights w = init_network({6, 4096, 2, 0.0, derive_seed(seed, 63, static_cast<std::uint64_t>(q))});
            const Matrix G = exact_gram(w, X, forward_all(w, X), 2) / 4096.0;
            if (min_eigenvalue(G) >= 0.5 * lam) ++ok;
        }
        out.push_back({"ntk_eigenvalue_floor", ok >= 18, static_cast<double>(ok), 18.0, "seeds=20"});
    }
    return out;
}

// =============================================================================
// solver
// =============================================================================

inline std::vector<CheckResult> check_solver(std::uint64_t seed) {
    std::vector<CheckResult> out;
    double worst = 0.0;
    for (Index n : {Index{4}, Index{8}, Index{16}}) {
        for (Index m : {Index{32}, Index{64}}) {
            Engine eng = make_engine(derive_seed(seed, 71, static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(m)));
            const Matrix U = gaussian_matrix(m, n, eng), V = gaussian_matrix(m, n, eng);
            const Vector c = gaussian_matrix(n, 1, eng);
            TensorRegressionOptions opts;
            opts.epsilon = 1e-6;
            opts.seed = eng();
            const auto rep = fast_tensor_regression(U, V, c, opts);
            worst = std::max(worst, (gram_exact(U, V) * rep.solution - c).norm() / c.norm());
        }
    }
    out.push_back({"gram_regression_rel_residual", worst <= 1e-6, worst, 1e-6, "eps=1e-6"});
    return out;
}

inline std::vector<CheckResult> run_suite(std::string_view suite, std::uint64_t seed, const std::optional<TrainConfig>& cfg = std::nullopt) {
    if (suite == "lrm") return check_lrm(seed);
    if (suite == "sketch") return check_sketch(seed);
    if (suite == "ntk") return check_ntk(seed, cfg);
    if (suite == "solver") return check_solver(seed);
    throw Error(ErrorCode::config, "unknown suite '" + std::string(suite) + "' (expected lrm, sketch, ntk or solver)");
}

}  // namespace subquad

#endif  // SUBQUAD_CHECKS_HPP
