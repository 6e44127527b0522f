#ifndef SUBQUAD_NET_CORE_HPP
#define SUBQUAD_NET_CORE_HPP

// Shifted-ReLU network: configuration, Gaussian initialization, sparse forward
// evaluation and the truncated-Gaussian statistics behind activation sparsity.
//
// Conventions
//   * W[0] is m x d, W[l] is m x m for l >= 1 (layer l+1 in 1-based terms).
//   * The activation is phi(x) = sqrt(c_b) * 1[x > tau] * x, tau = sqrt(2/m) b,
//     so every neuron fires with probability 1 - Phi(b) at initialization.

#include "subquad/common.hpp"

#include <boost/random/normal_distribution.hpp>

namespace subquad {

struct NetConfig {
    Index d = 1;       ///< input dimension
    Index m = 1;       ///< hidden width (all layers)
    int L = 1;         ///< number of weight layers
    double b = 0.0;    ///< shift, dimensionless
    std::uint64_t seed = 0;

    void validate() const {
        require(d >= 1, ErrorCode::config, "d must be >= 1");
        require(m >= 1, ErrorCode::config, "m must be >= 1");
        require(L >= 1, ErrorCode::config, "L must be >= 1");
        require(std::isfinite(b) && b >= 0.0, ErrorCode::config, "b must be finite and >= 0");
    }
};

/// c_b = (2 (1 - Phi(b) + b pdf(b)))^{-1}: makes E||phi(W x)||^2 = 1 for unit x
/// and W entries N(0, 2/m). Applied as sqrt(c_b) inside phi.
inline double shift_scale(double b) {
    require(std::isfinite(b) && b >= 0.0, ErrorCode::domain, "shift_scale needs finite b >= 0");
    return 1.0 / (2.0 * (normal_sf(b) + b * normal_pdf(b)));
}

inline double activation_threshold(Index m, double b) {
    return std::sqrt(2.0 / static_cast<double>(m)) * b;
}

struct Weights {
    std::vector<Matrix> W;
    Vector a;          ///< +-1 output weights
    double b = 0.0;
    double cb = 1.0;

    Index width() const { return a.size(); }
    Index input_dim() const { return W.front().cols(); }
    int layers() const { return static_cast<int>(W.size()); }
};

/// Fills `w` in place, reusing its storage when the shapes already match.
inline void init_network(const NetConfig& cfg, Weights& w) {
    cfg.validate();
    w.b = cfg.b;
    w.cb = shift_scale(cfg.b);
    const double sd = std::sqrt(2.0 / static_cast<double>(cfg.m));
    w.W.resize(static_cast<std::size_t>(cfg.L));
    for (int l = 0; l < cfg.L; ++l) {
        Matrix& M = w.W[static_cast<std::size_t>(l)];
        M.resize(cfg.m, l == 0 ? cfg.d : cfg.m);
        // one stream per layer, column-major fill
        Engine eng = make_engine(derive_seed(cfg.seed, 1, static_cast<std::uint64_t>(l)));
        boost::random::normal_distribution<double> normal(0.0, sd);
        double* p = M.data();
        for (Index k = 0; k < M.size(); ++k) p[k] = normal(eng);
    }
    Engine eng = make_engine(derive_seed(cfg.seed, 2));
    w.a.resize(cfg.m);
    for (Index r = 0; r < cfg.m; ++r) w.a[r] = rademacher(eng);
}

inline Weights init_network(const NetConfig& cfg) {
    Weights w;
    init_network(cfg, w);
    return w;
}

/// Support of D = diag(phi'(g)): entries equal `scale` = sqrt(c_b) on `active`.
struct ActivationMask {
    std::vector<Index> active;
    double scale = 1.0;

    Index count() const { return static_cast<Index>(active.size()); }
};

struct LayerCache {
    Vector g;          ///< dense pre-activation
    SparseVector h;    ///< sqrt(c_b) * g restricted to mask.active
    ActivationMask mask;
};

struct ForwardCache {
    std::vector<LayerCache> layers;  ///< layers[l-1] holds layer l
    double f = 0.0;
};

struct Activation {
    SparseVector h;
    ActivationMask mask;
};

inline Activation activate(const Vector& g, double b, Index m) {
    require_dims(g.size() == m, "activate: g must have length m");
    const double tau = activation_threshold(m, b);
    const double scale = std::sqrt(shift_scale(b));
    Activation out;
    out.h.size = m;
    out.mask.scale = scale;
    for (Index j = 0; j < m; ++j) {
        if (g[j] > tau) {
            out.mask.active.push_back(j);
            out.h.index.push_back(j);
            out.h.value.push_back(scale * g[j]);
        }
    }
    return out;
}

inline constexpr double unit_norm_tolerance = 1e-8;

inline void require_unit(const Vector& x) {
    if (std::abs(x.norm() - 1.0) > unit_norm_tolerance)
        throw Error(ErrorCode::non_unit_input, "input column is not unit-norm (data not normalized)");
}

/// g += W * h touching only the columns in support(h).
inline void accumulate_sparse_matvec(const Matrix& W, const SparseVector& h, Vector& g) {
    for (std::size_t p = 0; p < h.index.size(); ++p) g.noalias() += h.value[p] * W.col(h.index[p]);
}

inline double output(const Vector& a, const SparseVector& h) {
    double f = 0.0;
    for (std::size_t p = 0; p < h.index.size(); ++p) f += a[h.index[p]] * h.value[p];
    return f;
}

inline ForwardCache forward(const Weights& w, const Vector& x) {
    require_dims(x.size() == w.input_dim(), "forward: x must have length d");
    require_unit(x);
    const Index m = w.width();
    ForwardCache cache;
    cache.layers.reserve(w.W.size());
    for (int l = 0; l < w.layers(); ++l) {
        Vector g;
        if (l == 0) {
            g.noalias() = w.W[0] * x;
        } else {
            g = Vector::Zero(m);
            accumulate_sparse_matvec(w.W[l], cache.layers.back().h, g);
        }
        Activation act = activate(g, w.b, m);
        cache.layers.push_back({std::move(g), std::move(act.h), std::move(act.mask)});
    }
    cache.f = output(w.a, cache.layers.back().h);
    return cache;
}

/// Reference forward pass with dense matvecs and no sparsity shortcuts.
inline ForwardCache forward_dense(const Weights& w, const Vector& x) {
    require_dims(x.size() == w.input_dim(), "forward_dense: x must have length d");
    require_unit(x);
    const Index m = w.width();
    const double tau = activation_threshold(m, w.b);
    const double scale = std::sqrt(w.cb);
    ForwardCache cache;
    Vector prev = x;
    for (int l = 0; l < w.layers(); ++l) {
        Vector g = w.W[l] * prev;
        Vector hd = Vector::Zero(m);
        LayerCache lc;
        lc.mask.scale = scale;
        lc.h.size = m;
        for (Index j = 0; j < m; ++j) {
            if (g[j] > tau) {
                hd[j] = scale * g[j];
                lc.mask.active.push_back(j);
                lc.h.index.push_back(j);
                lc.h.value.push_back(hd[j]);
            }
        }
        lc.g = std::move(g);
        prev = std::move(hd);
        cache.layers.push_back(std::move(lc));
    }
    cache.f = w.a.dot(prev);
    return cache;
}

/// Dense forward of every column of X at once: one GEMM per layer.
inline std::vector<ForwardCache> forward_dense_batch(const Weights& w, const Matrix& X) {
    require_dims(X.rows() == w.input_dim(), "forward_dense_batch: X must have d rows");
    for (Index i = 0; i < X.cols(); ++i) require_unit(X.col(i));
    const Index m = w.width(), n = X.cols();
    const double tau = activation_threshold(m, w.b);
    const double scale = std::sqrt(w.cb);
    std::vector<ForwardCache> caches(static_cast<std::size_t>(n));
    Matrix prev = X;
    for (int l = 0; l < w.layers(); ++l) {
        Matrix Gm = w.W[static_cast<std::size_t>(l)] * prev;
        Matrix Hm = (Gm.array() > tau).select(scale * Gm, 0.0);
        for (Index i = 0; i < n; ++i) {
            LayerCache lc;
            lc.mask.scale = scale;
            lc.h.size = m;
            for (Index j = 0; j < m; ++j) {
                if (Gm(j, i) > tau) {
                    lc.mask.active.push_back(j);
                    lc.h.index.push_back(j);
                    lc.h.value.push_back(Hm(j, i));
                }
            }
            lc.g = Gm.col(i);
            caches[static_cast<std::size_t>(i)].layers.push_back(std::move(lc));
        }
        prev = std::move(Hm);
    }
    const Vector f = prev.transpose() * w.a;
    for (Index i = 0; i < n; ++i) caches[static_cast<std::size_t>(i)].f = f[i];
    return caches;
}

struct Predictions {
    Vector f;
    double loss = 0.0;
};

/// X holds the n inputs as unit columns.
inline Predictions predict_and_loss(const Weights& w, const Matrix& X, const Vector& y) {
    require_dims(X.cols() == y.size(), "predict_and_loss: X columns must match y");
    for (Index i = 0; i < X.cols(); ++i) require_unit(X.col(i));
    Predictions out;
    out.f.resize(X.cols());
    parallel_for(X.cols(), [&](Index i) { out.f[i] = forward(w, X.col(i)).f; });
    out.loss = 0.5 * (y - out.f).squaredNorm();
    return out;
}

struct ActiveCount {
    double exact = 0.0;  ///< m (1 - Phi(b))
    double bound = 0.0;  ///< m exp(-b^2 / 2)
};

inline ActiveCount expected_active(Index m, double b) {
    require(m >= 1 && b >= 0.0, ErrorCode::domain, "expected_active needs m >= 1, b >= 0");
    const auto md = static_cast<double>(m);
    return {md * normal_sf(b), md * std::exp(-0.5 * b * b)};
}

struct TruncatedMoments {
    double mean = 0.0;
    double variance = 0.0;
};

/// Moments of N(0,1) conditioned on exceeding b.
inline TruncatedMoments truncated_gaussian_stats(double b) {
    require(std::isfinite(b), ErrorCode::domain, "truncated_gaussian_stats needs finite b");
    const double hazard = normal_pdf(b) / normal_sf(b);
    return {hazard, 1.0 + b * hazard - hazard * hazard};
}

}  // namespace subquad

#endif  // SUBQUAD_NET_CORE_HPP
