// Acceptance run: one PASS/FAIL line per criterion. Every reference value is
// computed here from first principles rather than through the library's own
// oracles. Exit status is nonzero when any criterion fails.

#include "subquad/subquad.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <string>

using namespace subquad;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
    bool pass = false;
    double value = 0.0;
    double limit = 0.0;
    std::string detail;
};

Matrix gaussian(Index r, Index c, Engine& eng) {
    boost::random::normal_distribution<double> normal;
    Matrix M(r, c);
    for (Index k = 0; k < M.size(); ++k) M.data()[k] = normal(eng);
    return M;
}

Matrix unit_cols(Index d, Index n, Engine& eng) {
    Matrix X = gaussian(d, n, eng);
    X.colwise().normalize();
    return X;
}

// ---- reference formulas ------------------------------------------------------

double upper_tail(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

double cb_reference(double b) {
    const double pdf = std::exp(-0.5 * b * b) / std::sqrt(2.0 * std::numbers::pi);
    return 1.0 / (2.0 * (upper_tail(b) + b * pdf));
}

Matrix sylvester(Index N) {
    Matrix H = Matrix::Ones(1, 1);
    while (H.rows() < N) {
        const Index k = H.rows();
        Matrix next(2 * k, 2 * k);
        next << H, H, H, -H;
        H = std::move(next);
    }
    return H;
}

// arc-cosine recursion for b = 0: K_l = 2 sqrt(K_ii K_jj) F(theta) below the
// top layer, P(both pre-activations positive) at the top
std::vector<Matrix> kernels_reference(const Matrix& X, int L) {
    const double pi = std::numbers::pi;
    std::vector<Matrix> K = {X.transpose() * X};
    const Index n = X.cols();
    for (int l = 1; l <= L; ++l) {
        const Matrix& P = K.back();
        Matrix N(n, n);
        for (Index i = 0; i < n; ++i)
            for (Index j = 0; j < n; ++j) {
                const double s = std::sqrt(P(i, i) * P(j, j));
                const double rho = std::clamp(P(i, j) / s, -1.0, 1.0);
                const double th = std::acos(rho);
                N(i, j) = l < L ? 2.0 * s * (std::sin(th) + (pi - th) * std::cos(th)) / (2.0 * pi) : (pi - th) / (2.0 * pi);
            }
        K.push_back(N);
    }
    return K;
}

double smallest_eigenvalue(const Matrix& A) {
    return Eigen::SelfAdjointEigenSolver<Matrix>(A, Eigen::EigenvaluesOnly).eigenvalues()(0);
}

// plain dense forward with the shifted ReLU
struct DenseTrace {
    std::vector<Vector> g, h;
    double f = 0.0;
};

DenseTrace dense_trace(const Weights& w, const Vector& x, double b) {
    const Index m = w.width();
    const double tau = std::sqrt(2.0 / static_cast<double>(m)) * b;
    const double s = std::sqrt(cb_reference(b));
    DenseTrace tr;
    Vector h = x;
    for (const Matrix& W : w.W) {
        Vector g = W * h;
        h = g.unaryExpr([&](double v) { return v > tau ? s * v : 0.0; });
        tr.g.push_back(g);
        tr.h.push_back(h);
    }
    tr.f = w.a.dot(h);
    return tr;
}

double fitted_slope(const std::vector<double>& x, const std::vector<double>& y) {
    const auto n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double lx = std::log(x[k]), ly = std::log(y[k]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t k = v.size() / 2;
    return v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
}

std::string fmt(double v) { return format_double(v); }

// ---- criteria ------------------------------------------------------------------

Outcome lrm_equivalence() {
    double worst = 0.0;
    std::size_t fewest_flushes = std::numeric_limits<std::size_t>::max();
    for (int q = 0; q < 200; ++q) {
        Engine eng = make_engine(derive_seed(2024, static_cast<std::uint64_t>(q)));
        const Index m = 8 + static_cast<Index>(uniform_index(eng, 249));
        const Index threshold = 2 + static_cast<Index>(uniform_index(eng, 7));
        Weights w;
        w.W = {gaussian(m, m, eng) / std::sqrt(static_cast<double>(m))};
        w.a = Vector::Ones(m);
        LowRankState st = lrm_init(w, threshold);
        Matrix acc = w.W[0];
        int ops = 0;
        while (st.flush_count(1) < 3 || ops < 20) {
            ++ops;
            switch (uniform_index(eng, 4)) {
            case 0:
            case 1: {
                const Index r = 1 + static_cast<Index>(uniform_index(eng, 3));
                const Matrix U = gaussian(m, r, eng), V = gaussian(m, r, eng);
                acc += U * V.transpose();
                st.update(1, U, V);
                break;
            }
            case 2: {
                const Vector y = gaussian(m, 1, eng);
                const Vector want = acc * y, wantT = acc.transpose() * y;
                worst = std::max(worst, (st.query(1, y) - want).norm() / want.norm());
                worst = std::max(worst, (st.query_transpose(1, y) - wantT).norm() / wantT.norm());
                break;
            }
            default: {
                Vector y = Vector::Zero(m);
                for (int k = 0; k < 5; ++k) y[static_cast<Index>(uniform_index(eng, static_cast<std::uint64_t>(m)))] = gaussian(1, 1, eng)(0);
                if (y.norm() == 0.0) break;
                const Vector want = acc * y;
                worst = std::max(worst, (st.query(1, SparseVector::from_dense(y)) - want).norm() / want.norm());
                break;
            }
            }
        }
        worst = std::max(worst, (st.dense(1) - acc).norm() / acc.norm());
        fewest_flushes = std::min(fewest_flushes, st.flush_count(1));
    }
    return {worst <= 1e-10 && fewest_flushes >= 3, worst, 1e-10, "min_flushes=" + std::to_string(fewest_flushes)};
}

Outcome sketch_definitional() {
    double worst = 0.0;
    for (int q = 0; q < 50; ++q) {
        Engine eng = make_engine(derive_seed(77, static_cast<std::uint64_t>(q)));
        const Index m1 = 1 + static_cast<Index>(uniform_index(eng, 16));
        const Index m2 = 1 + static_cast<Index>(uniform_index(eng, 16));
        const Index s = 1 + static_cast<Index>(uniform_index(eng, 32));
        const Vector x = gaussian(m1, 1, eng), y = gaussian(m2, 1, eng);
        Vector xy(m1 * m2);
        for (Index i = 0; i < m1; ++i) xy.segment(i * m2, m2) = x[i] * y;

        const TensorSketchTransform ts = make_tensor_sketch(m1, m2, s, eng());
        Matrix S = Matrix::Zero(s, m1 * m2);
        for (Index i = 0; i < m1; ++i)
            for (Index j = 0; j < m2; ++j) {
                const auto ui = static_cast<std::size_t>(i), uj = static_cast<std::size_t>(j);
                S((ts.first.bucket[ui] + ts.second.bucket[uj]) % s, i * m2 + j) += ts.first.sign[ui] * ts.second.sign[uj];
            }
        worst = std::max(worst, (ts_apply(ts, x, y) - S * xy).cwiseAbs().maxCoeff());

        const TensorSrhtTransform sr = make_tensor_srht(m1, m2, s, eng());
        const Matrix H1 = sylvester(sr.m1_pad), H2 = sylvester(sr.m2_pad);
        Matrix R(s, m1 * m2);
        for (Index r = 0; r < s; ++r) {
            const auto [pi, pj] = sr.pairs[static_cast<std::size_t>(r)];
            for (Index i = 0; i < m1; ++i)
                for (Index j = 0; j < m2; ++j) R(r, i * m2 + j) = H1(pi, i) * sr.d1[i] * H2(pj, j) * sr.d2[j];
        }
        R /= std::sqrt(static_cast<double>(s));
        worst = std::max(worst, (srht_apply(sr, x, y) - R * xy).cwiseAbs().maxCoeff());
    }
    return {worst <= 1e-12, worst, 1e-12, "seeds=50"};
}

Outcome subspace_embedding() {
    const Index n = 8, m = 64, s = 1024;
    Engine eng = make_engine(31337);
    const Matrix U = gaussian(m, n, eng), V = gaussian(m, n, eng);
    Matrix Jt(m * m, n);
    for (Index i = 0; i < n; ++i)
        for (Index a = 0; a < m; ++a) Jt.col(i).segment(a * m, m) = U(a, i) * V.col(i);
    const Matrix Q = Eigen::HouseholderQR<Matrix>(Jt).householderQ() * Matrix::Identity(m * m, n);
    const Matrix H = sylvester(m);
    int within = 0;
    std::vector<double> dist;
    for (int q = 0; q < 100; ++q) {
        const TensorSrhtTransform T = make_tensor_srht(m, m, s, derive_seed(4242, static_cast<std::uint64_t>(q)));
        Matrix SQ(s, n);
        for (Index r = 0; r < s; ++r) {
            const auto [pi, pj] = T.pairs[static_cast<std::size_t>(r)];
            const Vector left = H.row(pi).transpose().cwiseProduct(T.d1);
            const Vector right = H.row(pj).transpose().cwiseProduct(T.d2);
            for (Index k = 0; k < n; ++k) {
                const Eigen::Map<const Matrix> Qk(Q.col(k).data(), m, m);  // Qk(j, i) = Q[i m + j]
                SQ(r, k) = left.dot(Qk.transpose() * right);
            }
        }
        SQ /= std::sqrt(static_cast<double>(s));
        const Vector sv = Eigen::JacobiSVD<Matrix>(SQ).singularValues();
        const double d = std::max(sv.maxCoeff() - 1.0, 1.0 - sv.minCoeff());
        dist.push_back(d);
        if (d <= 0.25) ++within;
    }
    return {within >= 95, static_cast<double>(within), 95.0, "median_distortion=" + fmt(median_of(dist))};
}

Outcome gram_regression() {
    double worst = 0.0;
    bool linear = true;
    std::string growth;
    for (Index n : {Index{4}, Index{8}, Index{16}}) {
        for (Index m : {Index{32}, Index{64}}) {
            Engine eng = make_engine(derive_seed(555, static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(m)));
            const Matrix U = gaussian(m, n, eng), V = gaussian(m, n, eng);
            const Vector c = gaussian(n, 1, eng);
            const Matrix G = (U.transpose() * U).cwiseProduct(V.transpose() * V);
            TensorRegressionOptions opts;
            opts.seed = eng();
            opts.epsilon = 1e-6;
            worst = std::max(worst, (G * fast_tensor_regression(U, V, c, opts).solution - c).norm() / c.norm());

            std::vector<double> iters;
            for (int e = 2; e <= 8; ++e) {
                opts.epsilon = std::pow(10.0, -e);
                iters.push_back(fast_tensor_regression(U, V, c, opts).iterations);
            }
            // per-decade increments: the last three may not outpace the first three
            double early = 0.0, late = 0.0;
            for (int k = 0; k < 3; ++k) {
                early += iters[static_cast<std::size_t>(k + 1)] - iters[static_cast<std::size_t>(k)];
                late += iters[static_cast<std::size_t>(k + 4)] - iters[static_cast<std::size_t>(k + 3)];
            }
            for (std::size_t k = 1; k < iters.size(); ++k) linear = linear && iters[k] >= iters[k - 1];
            linear = linear && late <= 1.5 * early + 3.0;
            growth += " n" + std::to_string(n) + "m" + std::to_string(m) + "=" + fmt(iters.front()) + ".." + fmt(iters.back());
        }
    }
    return {worst <= 1e-6 && linear, worst, 1e-6, std::string("iterations_linear=") + (linear ? "yes" : "no") + growth};
}

Outcome activation_sparsity() {
    const Index m = 4096;
    const double b = std::sqrt(0.8 * std::log(static_cast<double>(m)));
    const double p = upper_tail(b);
    const double mean = static_cast<double>(m) * p, sd = std::sqrt(static_cast<double>(m) * p * (1.0 - p));
    Engine eng = make_engine(99);
    const Vector x = unit_cols(16, 1, eng).col(0);
    int ok = 0;
    bool agree = true;
    for (int q = 0; q < 100; ++q) {
        const Weights w = init_network({16, m, 1, b, derive_seed(5, static_cast<std::uint64_t>(q))});
        const auto count = static_cast<double>(forward(w, x).layers[0].mask.count());
        const Vector g = w.W[0] * x;
        const double tau = std::sqrt(2.0 / static_cast<double>(m)) * b;
        agree = agree && count == static_cast<double>((g.array() > tau).count());
        if (std::abs(count - mean) <= 4.0 * sd) ++ok;
    }
    return {ok >= 95 && agree, static_cast<double>(ok), 95.0, "expected=" + fmt(mean) + " sd=" + fmt(sd)};
}

Outcome norm_preservation() {
    const Index m = 4096;
    Engine eng = make_engine(123);
    const Vector x = unit_cols(16, 1, eng).col(0);
    int worst_ok = 100;
    std::string detail;
    Weights w;
    for (double b : {0.0, 1.0}) {
        int ok = 0;
        for (int q = 0; q < 100; ++q) {
            init_network({16, m, 3, b, derive_seed(6, static_cast<std::uint64_t>(q))}, w);
            const ForwardCache c = forward(w, x);
            bool in = true;
            for (const LayerCache& lc : c.layers) {
                const double norm = std::sqrt(lc.h.squared_norm());
                in = in && norm >= 0.85 && norm <= 1.15;
            }
            ok += in;
        }
        worst_ok = std::min(worst_ok, ok);
        detail += " b" + fmt(b) + "=" + std::to_string(ok);
    }
    return {worst_ok >= 95, static_cast<double>(worst_ok), 95.0, detail.substr(1)};
}

Outcome ntk_consistency() {
    const Index n = 6;
    Engine eng = make_engine(7);
    const Matrix X = unit_cols(n, n, eng);
    const auto K = kernels_reference(X, 2);
    const double cb = cb_reference(0.0);
    std::vector<double> med;
    for (Index m : {Index{256}, Index{1024}, Index{4096}}) {
        std::vector<double> errs;
        for (int q = 0; q < 20; ++q) {
            const Weights w = init_network({n, m, 2, 0.0, derive_seed(8, static_cast<std::uint64_t>(q))});
            std::vector<DenseTrace> tr;
            for (Index i = 0; i < n; ++i) tr.push_back(dense_trace(w, X.col(i), 0.0));
            double e = 0.0;
            for (Index i = 0; i < n; ++i)
                for (Index j = 0; j < n; ++j) {
                    const double h1 = tr[i].h[0].dot(tr[j].h[0]);
                    const double h2 = cb * static_cast<double>(((tr[i].g[1].array() > 0) && (tr[j].g[1].array() > 0)).count()) /
                                      static_cast<double>(m);
                    e = std::max({e, std::abs(h1 - K[1](i, j)), std::abs(h2 - K[2](i, j))});
                }
            errs.push_back(e);
        }
        med.push_back(median_of(errs));
    }
    const double ratio = med[2] / med[0];
    const bool decreasing = med[0] > med[1] && med[1] > med[2];
    return {decreasing && ratio <= 0.7, ratio, 0.7,
            "median_err m256=" + fmt(med[0]) + " m1024=" + fmt(med[1]) + " m4096=" + fmt(med[2])};
}

Outcome eigenvalue_floor() {
    const Index n = 6, m = 4096;
    Engine eng = make_engine(9);
    const Matrix X = unit_cols(n, n, eng);
    const double lam = smallest_eigenvalue(kernels_reference(X, 2).back());
    int ok = 0;
    std::vector<double> ratios;
    for (int q = 0; q < 20; ++q) {
        const Weights w = init_network({n, m, 2, 0.0, derive_seed(10, static_cast<std::uint64_t>(q))});
        Matrix U(m, n), V(m, n);
        for (Index i = 0; i < n; ++i) {
            const RankOneRow row = compute_uv_last(w, forward(w, X.col(i)), X.col(i));
            U.col(i) = row.u.to_dense();
            V.col(i) = row.v.to_dense();
        }
        const Matrix G = (U.transpose() * U).cwiseProduct(V.transpose() * V) / static_cast<double>(m);
        const double r = smallest_eigenvalue(G) / lam;
        ratios.push_back(r);
        if (r >= 0.5) ++ok;
    }
    return {ok >= 18, static_cast<double>(ok), 18.0, "lambda_hat=" + fmt(lam) + " median_ratio=" + fmt(median_of(ratios))};
}

Outcome training_convergence() {
    int ok = 0;
    std::string detail;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const Dataset ds = gen_data(8, 8, seed, 0.5);
        TrainConfig cfg;
        cfg.net = {8, 2048, 2, 0.3, seed};
        cfg.seed = seed;
        cfg.T = 25;
        cfg.target_residual = 1e-3;
        bool pass = false;
        double final_res = 0.0, med = 0.0;
        try {
            const auto rows = train(cfg, ds.X, ds.y);
            std::vector<double> ratios;
            for (std::size_t k = 1; k < rows.size() && k <= 10; ++k) ratios.push_back(rows[k].residual / rows[k - 1].residual);
            final_res = rows.back().residual;
            med = ratios.empty() ? 0.0 : median_of(ratios);
            pass = final_res <= 1e-3 && med <= 0.5;
        } catch (const Error& e) {
            detail += " seed" + std::to_string(seed) + "_error=" + to_string(e.code());
        }
        ok += pass;
        detail += " s" + std::to_string(seed) + "=" + fmt(med) + "/" + fmt(final_res);
    }
    return {ok >= 8, static_cast<double>(ok), 8.0, "median_ratio/final:" + detail};
}

struct ScalingOutcome {
    Outcome fast, dense;
};

ScalingOutcome iteration_scaling() {
    BenchSpec spec;
    spec.base.net = {8, 512, 2, 0.0, 1};
    spec.base.seed = 1;
    spec.base.eps0_mode = Eps0Mode::fixed;
    spec.base.epsilon = 0.1;
    spec.base.lambda_mode = LambdaMode::manual;
    spec.base.lambda_manual = 0.1;
    spec.n = 8;
    spec.sep = 0.5;
    spec.data_seed = 1;
    spec.b_alpha = 0.4;
    spec.widths = {512, 1024, 2048, 4096};
    spec.reps = 5;
    spec.warmup = 1;
    const BenchResult res = run_bench(spec);
    auto slope_of = [&](ExecutionPath mode, std::string& detail) {
        std::vector<double> ms, ts;
        for (const BenchCell& c : res.cells) {
            if (c.mode != mode) continue;
            ms.push_back(static_cast<double>(c.m));
            ts.push_back(c.median_seconds[4]);
            detail += " m" + std::to_string(c.m) + "=" + fmt(c.median_seconds[4]) + "s";
        }
        return fitted_slope(ms, ts);
    };
    std::string df, dd;
    const double fs = slope_of(ExecutionPath::fast, df);
    const double ds = slope_of(ExecutionPath::dense, dd);
    return {{fs <= 1.8, fs, 1.8, df.substr(1)}, {std::abs(ds - 2.0) <= 0.2, ds, 2.0, "tolerance=0.2 " + dd.substr(1)}};
}

Outcome gradient_check() {
    const Index m = 64, d = 8, n = 4;
    const double b = 0.3;
    Engine eng = make_engine(11);
    const Matrix X = unit_cols(d, n, eng);
    const Weights w = init_network({d, m, 2, b, 12});
    const double tau = std::sqrt(2.0 / static_cast<double>(m)) * b;
    double worst = 0.0;
    int checked = 0, attempts = 0;
    while (checked < 100 && attempts < 100'000) {
        ++attempts;
        const auto i = static_cast<Index>(uniform_index(eng, n));
        const auto r = static_cast<Index>(uniform_index(eng, m));
        const auto s = static_cast<Index>(uniform_index(eng, m));
        const DenseTrace tr = dense_trace(w, X.col(i), b);
        if (std::abs(tr.g[1][r] - tau) < 1e-3 || tr.g[1][r] <= tau || tr.h[0][s] == 0.0) continue;
        const RankOneRow row = compute_uv_last(w, forward(w, X.col(i)), X.col(i));
        const double analytic = row.u.to_dense()[r] * row.v.to_dense()[s];
        const double step = 1e-6;
        Weights p = w, q = w;
        p.W[1](r, s) += step;
        q.W[1](r, s) -= step;
        const double fd = (dense_trace(p, X.col(i), b).f - dense_trace(q, X.col(i), b).f) / (2.0 * step);
        worst = std::max(worst, std::abs(fd - analytic) / std::abs(analytic));
        ++checked;
    }
    return {checked == 100 && worst <= 1e-5, worst, 1e-5, "entries=" + std::to_string(checked)};
}

int failures = 0;

void report(int id, const char* name, const Outcome& o, double seconds, double budget) {
    const bool pass = o.pass && seconds < budget;
    failures += !pass;
    std::printf("criterion %2d %-28s %s value=%s limit=%s seconds=%.1f budget=%.0f %s\n", id, name, pass ? "PASS" : "FAIL",
                fmt(o.value).c_str(), fmt(o.limit).c_str(), seconds, budget, o.detail.c_str());
    std::fflush(stdout);
}

void run(int id, const char* name, double budget, const std::function<Outcome()>& fn) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
        o = fn();
    } catch (const std::exception& e) {
        o.detail = std::string("exception: ") + e.what();
    }
    report(id, name, o, std::chrono::duration<double>(Clock::now() - t0).count(), budget);
}

}  // namespace

int main() {
    run(1, "lrm_oracle_equivalence", 30, lrm_equivalence);
    run(2, "sketch_definitional", 10, sketch_definitional);
    run(3, "subspace_embedding", 60, subspace_embedding);
    run(4, "gram_regression_accuracy", 60, gram_regression);
    run(5, "activation_sparsity", 60, activation_sparsity);
    run(6, "norm_preservation", 120, norm_preservation);
    run(7, "ntk_consistency", 300, ntk_consistency);
    run(8, "eigenvalue_floor", 180, eigenvalue_floor);
    run(9, "training_convergence", 600, training_convergence);
    {
        const auto t0 = Clock::now();
        ScalingOutcome o;
        try {
            o = iteration_scaling();
        } catch (const std::exception& e) {
            o.fast.detail = o.dense.detail = std::string("exception: ") + e.what();
        }
        const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
        Outcome both{o.fast.pass && o.dense.pass, o.fast.value, o.fast.limit,
                     "fast: " + o.fast.detail + " | dense slope=" + fmt(o.dense.value) + " target=2+-0.2 (" +
                         (o.dense.pass ? "ok" : "out of range") + ") " + o.dense.detail};
        report(10, "iteration_scaling", both, secs, 900);
    }
    run(11, "gradient_check", 10, gradient_check);
    std::printf("acceptance: %d of 11 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
