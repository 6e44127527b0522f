#ifndef SUBQUAD_LRM_HPP
#define SUBQUAD_LRM_HPP

// Lazy low-rank maintenance of weight deltas.
//
// Each layer keeps a dense base matrix and a list of (U, V) factor blocks; the
// logical weight is base + sum U V^T. Updates only append blocks. Once the
// accumulated rank reaches the threshold the blocks are folded into the base
// (a "flush"), so the rank seen by queries stays below the threshold.
//
// Layer arguments are 1-based (l in [1, L]) to match the Jacobian layer index.
// Queries are const and may run concurrently; update/flush need exclusive access.

#include "subquad/common.hpp"
#include "subquad/net_core.hpp"

#include <chrono>

namespace subquad {

class LowRankState {
public:
    struct FactorBlock {
        Matrix U;
        Matrix V;
    };

    struct Layer {
        Matrix base;
        std::vector<FactorBlock> factors;
        Index rank = 0;
        std::size_t flush_count = 0;
        double flush_seconds = 0.0;
    };

    LowRankState() = default;

    LowRankState(const Weights& weights, Index threshold) : threshold_(threshold) {
        require(threshold >= 1, ErrorCode::config, "low-rank threshold must be >= 1");
        layers_.reserve(weights.W.size());
        for (const Matrix& W : weights.W) layers_.push_back(Layer{W, {}, 0, 0, 0.0});
    }

    int layers() const { return static_cast<int>(layers_.size()); }
    Index threshold() const { return threshold_; }
    const Layer& layer(int l) const { return layers_.at(checked(l)); }
    Index rank(int l) const { return layer(l).rank; }

    /// Appends U V^T (U: rows x r, V: cols x r). Flushes once rank >= threshold.
    /// Returns true when the call flushed.
    bool update(int l, Matrix U, Matrix V) {
        Layer& ly = layers_.at(checked(l));
        require_dims(U.rows() == ly.base.rows() && V.rows() == ly.base.cols(),
                     "lrm update: factor rows must match the layer shape");
        require_dims(U.cols() == V.cols() && U.cols() >= 1, "lrm update: factors need equal width >= 1");
        ly.rank += U.cols();
        ly.factors.push_back({std::move(U), std::move(V)});
        if (ly.rank >= threshold_) {
            flush(l);
            return true;
        }
        return false;
    }

    /// Folds every block into the base. The logical weight is unchanged.
    void flush(int l) {
        Layer& ly = layers_.at(checked(l));
        if (ly.factors.empty()) return;
        const auto t0 = std::chrono::steady_clock::now();
        for (const FactorBlock& blk : ly.factors) ly.base.noalias() += blk.U * blk.V.transpose();
        ly.factors.clear();
        ly.rank = 0;
        ++ly.flush_count;
        ly.flush_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }

    /// (base + sum U V^T) y without forming the delta.
    Vector query(int l, const Vector& y) const {
        const Layer& ly = layer(l);
        require_dims(y.size() == ly.base.cols(), "lrm query: y has wrong length");
        Vector z = ly.base * y;
        for (const FactorBlock& blk : ly.factors) z.noalias() += blk.U * (blk.V.transpose() * y);
        return z;
    }

    /// Sparse y: touches only base columns in support(y). O(rows (nnz(y) + rank)).
    Vector query(int l, const SparseVector& y) const {
        const Layer& ly = layer(l);
        require_dims(y.size == ly.base.cols(), "lrm query: y has wrong length");
        Vector z = Vector::Zero(ly.base.rows());
        accumulate_sparse_matvec(ly.base, y, z);
        for (const FactorBlock& blk : ly.factors) {
            Vector vty = Vector::Zero(blk.V.cols());
            for (std::size_t p = 0; p < y.index.size(); ++p) vty.noalias() += y.value[p] * blk.V.row(y.index[p]).transpose();
            z.noalias() += blk.U * vty;
        }
        return z;
    }

    /// (base + sum U V^T)^T y.
    Vector query_transpose(int l, const Vector& y) const {
        const Layer& ly = layer(l);
        require_dims(y.size() == ly.base.rows(), "lrm query_transpose: y has wrong length");
        Vector z = ly.base.transpose() * y;
        for (const FactorBlock& blk : ly.factors) z.noalias() += blk.V * (blk.U.transpose() * y);
        return z;
    }

    Vector query_transpose(int l, const SparseVector& y) const {
        const Layer& ly = layer(l);
        require_dims(y.size == ly.base.rows(), "lrm query_transpose: y has wrong length");
        Vector z = Vector::Zero(ly.base.cols());
        for (std::size_t p = 0; p < y.index.size(); ++p) z.noalias() += y.value[p] * ly.base.row(y.index[p]).transpose();
        for (const FactorBlock& blk : ly.factors) {
            Vector uty = Vector::Zero(blk.U.cols());
            for (std::size_t p = 0; p < y.index.size(); ++p) uty.noalias() += y.value[p] * blk.U.row(y.index[p]).transpose();
            z.noalias() += blk.V * uty;
        }
        return z;
    }

    /// Materialized logical weight; meant for tests and small m.
    Matrix dense(int l) const {
        const Layer& ly = layer(l);
        Matrix out = ly.base;
        for (const FactorBlock& blk : ly.factors) out.noalias() += blk.U * blk.V.transpose();
        return out;
    }

    std::size_t flush_count(int l) const { return layer(l).flush_count; }
    double flush_seconds(int l) const { return layer(l).flush_seconds; }

private:
    std::size_t checked(int l) const {
        require(l >= 1 && l <= layers(), ErrorCode::domain, "layer index out of range");
        return static_cast<std::size_t>(l - 1);
    }

    Index threshold_ = 1;
    std::vector<Layer> layers_;
};

inline LowRankState lrm_init(const Weights& weights, Index threshold) {
    return LowRankState(weights, threshold);
}

/// Default restart threshold max(n, ceil(m^0.31)).
inline Index default_lrm_threshold(Index n, Index m) {
    const auto mr = static_cast<Index>(std::ceil(std::pow(static_cast<double>(m), 0.31)));
    return std::max<Index>(n, mr);
}

/// Weights whose layers are the materialized logical weights of `state`.
inline Weights dense_weights(const LowRankState& state, const Weights& like) {
    Weights w = like;
    for (int l = 1; l <= state.layers(); ++l) w.W[static_cast<std::size_t>(l - 1)] = state.dense(l);
    return w;
}

/// Forward pass where every layer matvec goes through the low-rank state.
inline ForwardCache forward(const LowRankState& state, const Weights& w, const Vector& x) {
    require_dims(x.size() == w.input_dim(), "forward: x must have length d");
    require_unit(x);
    const Index m = w.width();
    ForwardCache cache;
    for (int l = 1; l <= state.layers(); ++l) {
        Vector g = l == 1 ? state.query(1, x) : state.query(l, cache.layers.back().h);
        Activation act = activate(g, w.b, m);
        cache.layers.push_back({std::move(g), std::move(act.h), std::move(act.mask)});
    }
    cache.f = output(w.a, cache.layers.back().h);
    return cache;
}

}  // namespace subquad

#endif  // SUBQUAD_LRM_HPP
