#ifndef SUBQUAD_IO_HPP
#define SUBQUAD_IO_HPP

// Config files, datasets and CSV output.
//
// Config: one `key = value` per line, `#` starts a comment, unknown keys are
// rejected. Dataset: header `n d`, then n lines of d + 1 numbers (x then y)
// printed with 17 significant digits so a write/read round trip is exact.

#include "subquad/common.hpp"
#include "subquad/trainer.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace subquad {

// =============================================================================
// Number formatting
// =============================================================================

/// Shortest representation that round-trips; `digits17` forces 17 significant digits.
inline std::string format_double(double v, bool digits17 = false) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto [end, ec] = digits17 ? std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17)
                              : std::to_chars(buf, buf + sizeof buf, v);
    if (ec != std::errc{}) throw Error(ErrorCode::io, "number formatting failed");
    return std::string(buf, end);
}

inline double parse_double(std::string_view s, const std::string& what) {
    double v = 0.0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || end != s.data() + s.size()) throw Error(ErrorCode::config, what + ": not a number: '" + std::string(s) + "'");
    return v;
}

template <typename Int>
Int parse_integer(std::string_view s, const std::string& what) {
    Int v{};
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || end != s.data() + s.size()) throw Error(ErrorCode::config, what + ": not an integer: '" + std::string(s) + "'");
    return v;
}

inline bool parse_bool(std::string_view s, const std::string& what) {
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw Error(ErrorCode::config, what + ": expected true/false, got '" + std::string(s) + "'");
}

inline std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

// =============================================================================
// Config
// =============================================================================

using ConfigMap = std::map<std::string, std::string>;

inline ConfigMap parse_config(std::istream& in) {
    ConfigMap out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view sv = line;
        if (auto hash = sv.find('#'); hash != std::string_view::npos) sv = sv.substr(0, hash);
        sv = trim(sv);
        if (sv.empty()) continue;
        const auto eq = sv.find('=');
        if (eq == std::string_view::npos)
            throw Error(ErrorCode::config, "config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key(trim(sv.substr(0, eq)));
        const std::string value(trim(sv.substr(eq + 1)));
        if (key.empty()) throw Error(ErrorCode::config, "config line " + std::to_string(lineno) + ": empty key");
        if (!out.emplace(key, value).second) throw Error(ErrorCode::config, "duplicate config key '" + key + "'");
    }
    return out;
}

inline ConfigMap read_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io, "cannot open config '" + path + "'");
    return parse_config(in);
}

inline const std::set<std::string>& train_config_keys() {
    static const std::set<std::string> keys = {
        "d", "m", "L", "b", "seed", "net_seed", "T", "target_residual", "eps0", "variant", "s1", "s2",
        "solver_iter_cap", "gram_action", "lrm_threshold", "lambda_mode", "lambda", "exact_solver",
        "continue_on_no_convergence", "track_movement", "trust_radius", "path"};
    return keys;
}

inline void reject_unknown_keys(const ConfigMap& cfg, const std::set<std::string>& allowed) {
    for (const auto& [k, v] : cfg)
        if (!allowed.contains(k)) throw Error(ErrorCode::config, "unknown config key '" + k + "'");
}

/// Reads the training keys from `cfg`; callers reject unknown keys first.
/// `seed` sets both the network and the sketch seeds unless `net_seed` is given.
inline TrainConfig train_config_from(const ConfigMap& cfg) {
    TrainConfig tc;
    for (const auto& [key, value] : cfg) {
        if (key == "d") tc.net.d = parse_integer<Index>(value, key);
        else if (key == "m") tc.net.m = parse_integer<Index>(value, key);
        else if (key == "L") tc.net.L = parse_integer<int>(value, key);
        else if (key == "b") tc.net.b = parse_double(value, key);
        else if (key == "seed") tc.seed = parse_integer<std::uint64_t>(value, key);
        else if (key == "T") tc.T = parse_integer<int>(value, key);
        else if (key == "target_residual") tc.target_residual = parse_double(value, key);
        else if (key == "eps0") {
            if (value == "auto") {
                tc.eps0_mode = Eps0Mode::automatic;
            } else {
                tc.eps0_mode = Eps0Mode::fixed;
                tc.epsilon = parse_double(value, key);
            }
        } else if (key == "variant") {
            if (value == "tensor_srht") tc.variant = SketchVariant::tensor_srht;
            else if (value == "tensor_sketch") tc.variant = SketchVariant::tensor_sketch;
            else throw Error(ErrorCode::config, "variant must be tensor_srht or tensor_sketch");
        } else if (key == "s1") tc.s1 = parse_integer<Index>(value, key);
        else if (key == "s2") tc.s2 = parse_integer<Index>(value, key);
        else if (key == "solver_iter_cap") tc.solver_iter_cap = parse_integer<int>(value, key);
        else if (key == "gram_action") {
            if (value == "exact") tc.gram_action = GramAction::exact;
            else if (value == "sketched") tc.gram_action = GramAction::sketched;
            else throw Error(ErrorCode::config, "gram_action must be exact or sketched");
        } else if (key == "lrm_threshold") tc.lrm_threshold = parse_integer<Index>(value, key);
        else if (key == "lambda_mode") {
            if (value == "ntk_closed_form") tc.lambda_mode = LambdaMode::ntk_closed_form;
            else if (value == "gram_init") tc.lambda_mode = LambdaMode::gram_init;
            else if (value == "manual") tc.lambda_mode = LambdaMode::manual;
            else throw Error(ErrorCode::config, "lambda_mode must be ntk_closed_form, gram_init or manual");
        } else if (key == "lambda") tc.lambda_manual = parse_double(value, key);
        else if (key == "exact_solver") tc.exact_solver = parse_bool(value, key);
        else if (key == "continue_on_no_convergence") tc.continue_on_no_convergence = parse_bool(value, key);
        else if (key == "track_movement") tc.track_movement = parse_bool(value, key);
        else if (key == "trust_radius") tc.trust_radius = parse_double(value, key);
        else if (key == "path") {
            if (value == "fast") tc.path = ExecutionPath::fast;
            else if (value == "dense") tc.path = ExecutionPath::dense;
            else throw Error(ErrorCode::config, "path must be fast or dense");
        }
    }
    tc.net.seed = tc.seed;
    if (auto it = cfg.find("net_seed"); it != cfg.end()) tc.net.seed = parse_integer<std::uint64_t>(it->second, "net_seed");
    if (cfg.contains("lambda") && tc.lambda_mode != LambdaMode::manual)
        throw Error(ErrorCode::config, "lambda is only meaningful with lambda_mode = manual");
    tc.validate();
    return tc;
}

// =============================================================================
// Datasets
// =============================================================================

struct Dataset {
    Matrix X;  ///< d x n, unit columns
    Vector y;

    Index n() const { return X.cols(); }
    Index d() const { return X.rows(); }
};

inline void write_dataset(std::ostream& out, const Dataset& ds) {
    out << ds.n() << ' ' << ds.d() << '\n';
    for (Index i = 0; i < ds.n(); ++i) {
        for (Index k = 0; k < ds.d(); ++k) out << format_double(ds.X(k, i), true) << ' ';
        out << format_double(ds.y[i], true) << '\n';
    }
}

inline void write_dataset(const std::string& path, const Dataset& ds) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::io, "cannot write dataset '" + path + "'");
    write_dataset(out, ds);
    if (!out) throw Error(ErrorCode::io, "write failed for '" + path + "'");
}

inline Dataset read_dataset(std::istream& in) {
    std::string tok;
    auto next = [&](const char* what) {
        if (!(in >> tok)) throw Error(ErrorCode::io, std::string("dataset truncated while reading ") + what);
        return std::string_view(tok);
    };
    Dataset ds;
    const auto n = parse_integer<Index>(next("n"), "dataset n");
    const auto d = parse_integer<Index>(next("d"), "dataset d");
    if (n < 1 || d < 1) throw Error(ErrorCode::io, "dataset needs n, d >= 1");
    ds.X.resize(d, n);
    ds.y.resize(n);
    for (Index i = 0; i < n; ++i) {
        for (Index k = 0; k < d; ++k) ds.X(k, i) = parse_double(next("x"), "dataset x");
        ds.y[i] = parse_double(next("y"), "dataset y");
    }
    if (in >> tok) throw Error(ErrorCode::io, "dataset has trailing data");
    return ds;
}

inline Dataset read_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io, "cannot open dataset '" + path + "'");
    try {
        return read_dataset(in);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::config) throw Error(ErrorCode::io, e.what());
        throw;
    }
}

inline constexpr int separation_attempts = 10'000;

/// Unit-norm Gaussian directions with pairwise distance >= sep and
/// y ~ Uniform[-1, 1]. A candidate violating the separation is redrawn.
inline Dataset gen_data(Index n, Index d, std::uint64_t seed, double sep) {
    require(n >= 1 && d >= 1, ErrorCode::config, "gen_data: n and d must be >= 1");
    require(sep >= 0.0 && sep < std::numbers::sqrt2, ErrorCode::config, "gen_data: separation must lie in [0, sqrt 2)");
    Engine eng = make_engine(derive_seed(seed, 7));
    boost::random::normal_distribution<double> normal;
    Dataset ds;
    ds.X.resize(d, n);
    ds.y.resize(n);
    for (Index i = 0; i < n; ++i) {
        int attempt = 0;
        for (;;) {
            Vector x(d);
            double norm = 0.0;
            while (norm < 1e-12) {
                for (Index k = 0; k < d; ++k) x[k] = normal(eng);
                norm = x.norm();
            }
            x /= norm;
            bool ok = true;
            for (Index j = 0; j < i && ok; ++j) ok = (ds.X.col(j) - x).norm() >= sep;
            if (ok) {
                ds.X.col(i) = x;
                break;
            }
            if (++attempt >= separation_attempts)
                throw Error(ErrorCode::config, "gen_data: separation infeasible, resample cap reached");
        }
    }
    for (Index i = 0; i < n; ++i) ds.y[i] = 2.0 * uniform01(eng) - 1.0;
    return ds;
}

// =============================================================================
// CSV
// =============================================================================

inline std::vector<std::string> metrics_header(int L) {
    std::vector<std::string> cols = {"t", "residual", "loss"};
    for (int l = 1; l <= L; ++l) {
        cols.push_back("h" + std::to_string(l) + "_nnz_max");
        cols.push_back("h" + std::to_string(l) + "_nnz_mean");
    }
    for (const char* c : {"mask_change_max", "mask_change_mean", "rank_L", "dead_samples", "regression_iterations", "epsilon0",
                          "forward_seconds", "sketch_seconds", "solve_seconds", "update_seconds", "flush_seconds",
                          "flush_count", "movement", "trust_region_exceeded", "no_convergence", "updated"})
        cols.emplace_back(c);
    return cols;
}

inline void write_csv_row(std::ostream& out, const std::vector<std::string>& cells) {
    for (std::size_t k = 0; k < cells.size(); ++k) {
        if (k) out << ',';
        out << cells[k];
    }
    out << '\n';
}

inline std::vector<std::string> metrics_row(const IterationMetrics& m) {
    std::vector<std::string> r = {std::to_string(m.t), format_double(m.residual), format_double(m.loss)};
    for (const LayerSparsity& s : m.sparsity) {
        r.push_back(std::to_string(s.max_nnz));
        r.push_back(format_double(s.mean_nnz));
    }
    r.push_back(std::to_string(m.mask_change_max));
    r.push_back(format_double(m.mask_change_mean));
    r.push_back(std::to_string(m.rank_L));
    r.push_back(std::to_string(m.dead_samples));
    r.push_back(std::to_string(m.regression_iterations));
    r.push_back(format_double(m.epsilon0));
    r.push_back(format_double(m.forward_seconds));
    r.push_back(format_double(m.sketch_seconds));
    r.push_back(format_double(m.solve_seconds));
    r.push_back(format_double(m.update_seconds));
    r.push_back(format_double(m.flush_seconds));
    r.push_back(std::to_string(m.flush_count));
    r.push_back(format_double(m.movement));
    r.push_back(m.trust_region_exceeded ? "1" : "0");
    r.push_back(m.no_convergence ? "1" : "0");
    r.push_back(m.updated ? "1" : "0");
    return r;
}

inline void write_metrics_csv(std::ostream& out, int L, const std::vector<IterationMetrics>& rows) {
    write_csv_row(out, metrics_header(L));
    for (const auto& m : rows) write_csv_row(out, metrics_row(m));
}

}  // namespace subquad

#endif  // SUBQUAD_IO_HPP
