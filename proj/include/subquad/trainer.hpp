#ifndef SUBQUAD_TRAINER_HPP
#define SUBQUAD_TRAINER_HPP

// Last-layer Gauss-Newton training.
//
// Each step: forward every sample (layer matvecs through the low-rank state),
// extract the rank-one Jacobian rows vec(u_i v_i^T) of layer L, solve
// J J^T g = f_t - y with the sketch-preconditioned Gram solver, and append
// -sum_i g_i u_i v_i^T to W_L as one rank-n block.
//
// The dense path keeps W_L materialized and runs every matvec densely. It is
// the timing and correctness reference for the fast path.

#include "subquad/common.hpp"
#include "subquad/lrm.hpp"
#include "subquad/net_core.hpp"
#include "subquad/ntk_oracle.hpp"
#include "subquad/solver.hpp"

#include <chrono>
#include <optional>

namespace subquad {

enum class LambdaMode { ntk_closed_form, gram_init, manual };
enum class Eps0Mode { fixed, automatic };
enum class ExecutionPath { fast, dense };

struct TrainConfig {
    NetConfig net;
    int T = 25;
    double target_residual = 1e-3;
    Eps0Mode eps0_mode = Eps0Mode::automatic;
    double epsilon = 0.1;                 ///< used when eps0_mode == fixed
    SketchVariant variant = SketchVariant::tensor_srht;
    Index s1 = 0;                         ///< 0: solver default
    Index s2 = 0;                         ///< 0: solver default
    int solver_iter_cap = 0;              ///< 0: solver default
    GramAction gram_action = GramAction::exact;
    Index lrm_threshold = 0;              ///< 0: max(n, ceil(m^0.31))
    LambdaMode lambda_mode = LambdaMode::gram_init;
    double lambda_manual = 0.0;
    bool exact_solver = false;            ///< direct Cholesky solve instead of the sketched solver
    bool continue_on_no_convergence = false;
    bool track_movement = false;
    double trust_radius = 1.0;            ///< flag when max_r ||dW_r|| sqrt(m) exceeds this
    ExecutionPath path = ExecutionPath::fast;
    std::uint64_t seed = 0;               ///< sketch streams; the network uses net.seed

    void validate() const {
        net.validate();
        require(T >= 0, ErrorCode::config, "T must be >= 0");
        require(std::isfinite(target_residual) && target_residual >= 0.0, ErrorCode::config, "target_residual must be >= 0");
        if (eps0_mode == Eps0Mode::fixed)
            require(epsilon > 0.0 && epsilon < 0.5, ErrorCode::config, "fixed epsilon must lie in (0, 1/2)");
        require(s1 >= 0 && s2 >= 0 && lrm_threshold >= 0 && solver_iter_cap >= 0, ErrorCode::config,
                "sketch sizes, threshold and iteration cap must be >= 0");
        if (lambda_mode == LambdaMode::manual)
            require(lambda_manual > 0.0, ErrorCode::config, "manual lambda must be > 0");
        if (lambda_mode == LambdaMode::ntk_closed_form)
            require(net.b == 0.0, ErrorCode::config, "closed-form NTK lambda needs b = 0");
        require(trust_radius > 0.0, ErrorCode::config, "trust_radius must be > 0");
    }
};

struct LayerSparsity {
    Index max_nnz = 0;
    double mean_nnz = 0.0;
};

struct IterationMetrics {
    int t = 0;
    double residual = 0.0;               ///< ||f_t - y||
    double loss = 0.0;                   ///< 0.5 ||f_t - y||^2
    std::vector<LayerSparsity> sparsity; ///< per layer, over samples
    Index mask_change_max = 0;           ///< ||D_{i,L}(t) - D_{i,L}(0)||_0
    double mask_change_mean = 0.0;
    Index rank_L = 0;                    ///< accumulated rank after this step
    Index dead_samples = 0;              ///< samples with a zero Jacobian row, left out of the solve
    int regression_iterations = 0;
    double epsilon0 = 0.0;
    double forward_seconds = 0.0;
    double sketch_seconds = 0.0;
    double solve_seconds = 0.0;
    double update_seconds = 0.0;         ///< excludes flushes
    double flush_seconds = 0.0;          ///< spent flushing during this step
    std::size_t flush_count = 0;         ///< cumulative
    double movement = std::numeric_limits<double>::quiet_NaN();  ///< max_r ||W_{L,r}(t) - W_{L,r}(0)||
    bool trust_region_exceeded = false;
    bool no_convergence = false;
    bool updated = false;                ///< false for the terminal record

    double iteration_seconds() const { return forward_seconds + sketch_seconds + solve_seconds + update_seconds; }
};

// =============================================================================
// Jacobian rows
// =============================================================================

struct RankOneRow {
    SparseVector u;
    SparseVector v;
};

/// u = D_{i,L} a, v = h_{i,L-1} (x at L = 1).
inline RankOneRow compute_uv_last(const Weights& w, const ForwardCache& cache, const Vector& x) {
    const int L = w.layers();
    require_dims(static_cast<int>(cache.layers.size()) == L, "compute_uv_last: cache must cover every layer");
    const ActivationMask& mask = cache.layers.back().mask;
    RankOneRow row;
    row.u.size = w.width();
    row.u.index = mask.active;
    row.u.value.reserve(mask.active.size());
    for (Index j : mask.active) row.u.value.push_back(mask.scale * w.a[j]);
    row.v = L == 1 ? SparseVector::from_dense(x) : cache.layers[static_cast<std::size_t>(L - 2)].h;
    return row;
}

/// u_{i,l} built right to left with transposed low-rank queries restricted to the masks.
inline RankOneRow compute_uv_general(const LowRankState& state, const Weights& w, const ForwardCache& cache, const Vector& x,
                                     int l) {
    const int L = w.layers();
    require(l >= 1 && l <= L, ErrorCode::domain, "compute_uv_general: layer out of range");
    RankOneRow row = compute_uv_last(w, cache, x);
    for (int k = L; k > l; --k) {
        const Vector back = state.query_transpose(k, row.u);
        const ActivationMask& mask = cache.layers[static_cast<std::size_t>(k - 2)].mask;
        SparseVector next;
        next.size = back.size();
        next.index = mask.active;
        next.value.reserve(mask.active.size());
        for (Index j : mask.active) next.value.push_back(mask.scale * back[j]);
        row.u = std::move(next);
    }
    if (l != L) row.v = l == 1 ? SparseVector::from_dense(x) : cache.layers[static_cast<std::size_t>(l - 2)].h;
    return row;
}

// =============================================================================
// Step size and eigenvalue estimate
// =============================================================================

inline double choose_epsilon0(double lambda_hat, Index n) {
    require(lambda_hat > 0.0 && std::isfinite(lambda_hat), ErrorCode::non_positive_lambda, "choose_epsilon0: lambda must be > 0");
    require(n >= 1, ErrorCode::domain, "choose_epsilon0: n must be >= 1");
    return std::min(1.0 / 9.0, std::sqrt(lambda_hat / static_cast<double>(n)));
}

inline constexpr double lambda_floor = 1e-10;

/// ntk_closed_form: lambda_min(K_L). gram_init: (4/3) lambda_min(G_L / m) at
/// initialization, where G_L / m is the width-normalized last-layer Gram.
inline double estimate_lambda(const Matrix& X, const TrainConfig& cfg, const Weights& w) {
    switch (cfg.lambda_mode) {
    case LambdaMode::manual:
        require(cfg.lambda_manual > 0.0, ErrorCode::config, "manual lambda must be > 0");
        return cfg.lambda_manual;
    case LambdaMode::ntk_closed_form: {
        require(cfg.net.b == 0.0, ErrorCode::config, "closed-form NTK lambda needs b = 0");
        const double lam = ntk_kernels(X, cfg.net.L).lambda_L;
        if (!(lam > lambda_floor)) throw Error(ErrorCode::non_positive_lambda, "NTK kernel is singular (duplicate inputs?)");
        return lam;
    }
    case LambdaMode::gram_init: {
        const auto caches = forward_all(w, X);
        const Matrix G = exact_gram(w, X, caches, w.layers()) / static_cast<double>(w.width());
        return std::max(4.0 / 3.0 * min_eigenvalue(G), std::numeric_limits<double>::epsilon());
    }
    }
    throw Error(ErrorCode::config, "unknown lambda mode");
}

// =============================================================================
// Trainer
// =============================================================================

class Trainer {
public:
    Trainer(const TrainConfig& cfg, Matrix X, Vector y) : cfg_(cfg), X_(std::move(X)), y_(std::move(y)) {
        cfg_.validate();
        require_dims(X_.rows() == cfg_.net.d, "Trainer: X must have d rows");
        require_dims(X_.cols() == y_.size() && X_.cols() >= 1, "Trainer: need n >= 1 columns in X and n labels");
        for (Index i = 0; i < X_.cols(); ++i) require_unit(X_.col(i));
        weights_ = init_network(cfg_.net);
        const Index threshold = cfg_.lrm_threshold > 0 ? cfg_.lrm_threshold : default_lrm_threshold(n(), cfg_.net.m);
        state_ = lrm_init(weights_, threshold);
        lambda_ = estimate_lambda(X_, cfg_, weights_);
        eps0_ = cfg_.eps0_mode == Eps0Mode::fixed ? cfg_.epsilon : choose_epsilon0(lambda_, n());
        if (cfg_.track_movement) delta_L_ = Matrix::Zero(weights_.W.back().rows(), weights_.W.back().cols());
    }

    Index n() const { return X_.cols(); }
    double lambda_hat() const { return lambda_; }
    double epsilon0() const { return eps0_; }
    int steps_taken() const { return t_; }
    const TrainConfig& config() const { return cfg_; }
    const LowRankState& state() const { return state_; }
    const Weights& initial_weights() const { return weights_; }

    /// Current logical weights (materialized).
    Weights current_weights() const {
        if (cfg_.path == ExecutionPath::dense) return dense_;
        return dense_weights(state_, weights_);
    }

    /// Current W_L minus its initial value.
    Matrix last_layer_delta() const {
        const Matrix now = cfg_.path == ExecutionPath::dense ? dense_.W.back() : state_.dense(state_.layers());
        return now - weights_.W.back();
    }

    /// Network outputs on the training inputs.
    Vector predictions() const {
        Vector f(n());
        const auto caches = forward_pass();
        for (Index i = 0; i < n(); ++i) f[i] = caches[static_cast<std::size_t>(i)].f;
        return f;
    }

    /// One forward + Gauss-Newton update.
    IterationMetrics step() {
        IterationMetrics rec = begin_record();
        apply_update(rec);
        return rec;
    }

    /// Runs up to T updates and stops once the residual reaches the target.
    /// Record t holds the pre-update state at step t; the last record is
    /// forward-only, so T = 0 yields exactly one record.
    std::vector<IterationMetrics> train() {
        std::vector<IterationMetrics> out;
        for (;;) {
            IterationMetrics rec = begin_record();
            if (rec.residual <= cfg_.target_residual || t_ >= cfg_.T) {
                out.push_back(std::move(rec));
                break;
            }
            apply_update(rec);
            out.push_back(std::move(rec));
        }
        return out;
    }

private:
    using Clock = std::chrono::steady_clock;
    static double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

    std::vector<ForwardCache> forward_pass() const {
        if (cfg_.path == ExecutionPath::dense) return forward_dense_batch(dense_initialized() ? dense_ : weights_, X_);
        std::vector<ForwardCache> caches(static_cast<std::size_t>(n()));
        {
            parallel_for(n(), [&](Index i) { caches[static_cast<std::size_t>(i)] = forward(state_, weights_, X_.col(i)); });
        }
        return caches;
    }

    bool dense_initialized() const { return !dense_.W.empty(); }

    IterationMetrics begin_record() {
        if (cfg_.path == ExecutionPath::dense && !dense_initialized()) dense_ = weights_;
        IterationMetrics rec;
        rec.t = t_;
        rec.epsilon0 = eps0_;
        auto t0 = Clock::now();
        caches_ = forward_pass();
        rec.forward_seconds = seconds_since(t0);

        Vector f(n());
        for (Index i = 0; i < n(); ++i) f[i] = caches_[static_cast<std::size_t>(i)].f;
        residual_vec_ = f - y_;
        rec.residual = residual_vec_.norm();
        rec.loss = 0.5 * residual_vec_.squaredNorm();

        const int L = weights_.layers();
        rec.sparsity.resize(static_cast<std::size_t>(L));
        for (int l = 0; l < L; ++l) {
            LayerSparsity& sp = rec.sparsity[static_cast<std::size_t>(l)];
            double total = 0.0;
            for (const ForwardCache& c : caches_) {
                const Index k = c.layers[static_cast<std::size_t>(l)].mask.count();
                sp.max_nnz = std::max(sp.max_nnz, k);
                total += static_cast<double>(k);
            }
            sp.mean_nnz = total / static_cast<double>(n());
        }
        if (initial_masks_.empty()) {
            for (const ForwardCache& c : caches_) initial_masks_.push_back(c.layers.back().mask.active);
        }
        double total = 0.0;
        for (std::size_t i = 0; i < caches_.size(); ++i) {
            const auto& now = caches_[i].layers.back().mask.active;
            std::vector<Index> diff;
            std::set_symmetric_difference(now.begin(), now.end(), initial_masks_[i].begin(), initial_masks_[i].end(),
                                          std::back_inserter(diff));
            rec.mask_change_max = std::max(rec.mask_change_max, static_cast<Index>(diff.size()));
            total += static_cast<double>(diff.size());
        }
        rec.mask_change_mean = total / static_cast<double>(n());
        rec.rank_L = cfg_.path == ExecutionPath::fast ? state_.rank(L) : 0;
        rec.flush_count = state_.flush_count(L);
        if (cfg_.track_movement) record_movement(rec);
        return rec;
    }

    void record_movement(IterationMetrics& rec) const {
        rec.movement = delta_L_.rowwise().norm().maxCoeff();
        rec.trust_region_exceeded = rec.movement * std::sqrt(static_cast<double>(cfg_.net.m)) > cfg_.trust_radius;
    }

    void apply_update(IterationMetrics& rec) {
        const int L = weights_.layers();
        const Index m = cfg_.net.m;
        const Index vdim = L == 1 ? cfg_.net.d : m;

        auto t0 = Clock::now();
        Matrix U = Matrix::Zero(m, n());
        Matrix V = Matrix::Zero(vdim, n());
        const Weights& w = cfg_.path == ExecutionPath::dense ? dense_ : weights_;
        for (Index i = 0; i < n(); ++i) {
            const RankOneRow row = compute_uv_last(w, caches_[static_cast<std::size_t>(i)], X_.col(i));
            for (std::size_t p = 0; p < row.u.index.size(); ++p) U(row.u.index[p], i) = row.u.value[p];
            for (std::size_t p = 0; p < row.v.index.size(); ++p) V(row.v.index[p], i) = row.v.value[p];
        }
        const double extract = seconds_since(t0);

        // A sample with no active last-layer neuron has a zero Jacobian row; the
        // step cannot move its output, so it is left out of the Gram system.
        std::vector<Index> live;
        for (Index i = 0; i < n(); ++i)
            if (U.col(i).squaredNorm() > 0.0 && V.col(i).squaredNorm() > 0.0) live.push_back(i);
        rec.dead_samples = n() - static_cast<Index>(live.size());
        if (rec.dead_samples > 0) {
            Matrix Ul(U.rows(), static_cast<Index>(live.size())), Vl(V.rows(), static_cast<Index>(live.size()));
            Vector cl(static_cast<Index>(live.size()));
            for (std::size_t k = 0; k < live.size(); ++k) {
                Ul.col(static_cast<Index>(k)) = U.col(live[k]);
                Vl.col(static_cast<Index>(k)) = V.col(live[k]);
                cl[static_cast<Index>(k)] = residual_vec_[live[k]];
            }
            U = std::move(Ul);
            V = std::move(Vl);
            live_residual_ = std::move(cl);
        } else {
            live_residual_ = residual_vec_;
        }

        Vector g = Vector::Zero(U.cols());
        t0 = Clock::now();
        if (U.cols() == 0) {
            // nothing to fit
        } else if (cfg_.exact_solver) {
            g = gram_solve_direct(gram_exact(U, V), live_residual_);
            rec.solve_seconds = seconds_since(t0) + extract;
        } else {
            TensorRegressionOptions opts;
            opts.epsilon = eps0_;
            opts.iter_cap = cfg_.solver_iter_cap;
            opts.variant = cfg_.variant;
            opts.s1 = cfg_.s1;
            opts.s2 = cfg_.s2;
            opts.action = cfg_.gram_action;
            opts.seed = derive_seed(cfg_.seed, 100, static_cast<std::uint64_t>(t_));
            try {
                const TensorRegressionResult res = fast_tensor_regression_detailed(U, V, live_residual_, opts);
                g = res.report.solution;
                rec.regression_iterations = res.report.iterations;
                rec.sketch_seconds = res.sketch_seconds + extract;
            } catch (const NoConvergenceError& e) {
                if (!cfg_.continue_on_no_convergence) throw;
                g = e.report().solution;
                rec.regression_iterations = e.report().iterations;
                rec.no_convergence = true;
                rec.sketch_seconds = extract;
            }
            rec.solve_seconds = seconds_since(t0) - (rec.sketch_seconds - extract);
        }

        // W_L <- W_L - sum_i g_i u_i v_i^T
        t0 = Clock::now();
        if (U.cols() == 0) {
            rec.update_seconds = seconds_since(t0);
            rec.rank_L = cfg_.path == ExecutionPath::fast ? state_.rank(L) : 0;
            rec.updated = true;
            ++t_;
            return;
        }
        Matrix coeffs = U * (-g).asDiagonal();
        if (cfg_.track_movement) delta_L_.noalias() += coeffs * V.transpose();
        double flushed = 0.0;
        if (cfg_.path == ExecutionPath::dense) {
            dense_.W.back().noalias() += coeffs * V.transpose();
        } else {
            const double before = state_.flush_seconds(L);
            state_.update(L, std::move(coeffs), std::move(V));
            flushed = state_.flush_seconds(L) - before;
        }
        rec.update_seconds = seconds_since(t0) - flushed;
        rec.flush_seconds = flushed;
        rec.rank_L = cfg_.path == ExecutionPath::fast ? state_.rank(L) : 0;
        rec.flush_count = state_.flush_count(L);
        rec.updated = true;
        ++t_;
    }

    TrainConfig cfg_;
    Matrix X_;
    Vector y_;
    Weights weights_;           ///< initialization; layers below L never change
    Weights dense_;             ///< dense path only
    LowRankState state_;
    Matrix delta_L_;
    double lambda_ = 0.0;
    double eps0_ = 0.0;
    int t_ = 0;
    std::vector<ForwardCache> caches_;
    Vector residual_vec_;
    Vector live_residual_;
    std::vector<std::vector<Index>> initial_masks_;
};

inline std::vector<IterationMetrics> train(const TrainConfig& cfg, const Matrix& X, const Vector& y) {
    Trainer trainer(cfg, X, y);
    return trainer.train();
}

}  // namespace subquad

#endif  // SUBQUAD_TRAINER_HPP
