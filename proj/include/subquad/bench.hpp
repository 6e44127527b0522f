#ifndef SUBQUAD_BENCH_HPP
#define SUBQUAD_BENCH_HPP

// Per-iteration timing sweeps over the width m, fast path vs dense path.
// Each (mode, m) cell builds a fresh trainer, runs warm-up steps that are not
// timed, then times `reps` steps. Flush time and initialization are excluded.

#include "subquad/io.hpp"
#include "subquad/trainer.hpp"

namespace subquad {

struct BenchSpec {
    TrainConfig base;                ///< m (and b when b_alpha is set) overridden per sweep point
    Index n = 8;
    double sep = 0.5;
    std::uint64_t data_seed = 0;
    std::optional<double> b_alpha;   ///< b = sqrt(2 alpha ln m)
    std::vector<Index> widths;
    int reps = 5;
    int warmup = 1;
    std::vector<ExecutionPath> modes = {ExecutionPath::fast, ExecutionPath::dense};

    void validate() const {
        require(!widths.empty(), ErrorCode::config, "bench: need at least one width");
        for (Index m : widths) require(m >= 1, ErrorCode::config, "bench: widths must be >= 1");
        require(reps >= 3, ErrorCode::config, "bench: reps must be >= 3");
        require(warmup >= 0, ErrorCode::config, "bench: warmup must be >= 0");
        require(n >= 1, ErrorCode::config, "bench: n must be >= 1");
        if (b_alpha) require(*b_alpha >= 0.0, ErrorCode::config, "bench: b_alpha must be >= 0");
    }
};

inline double shift_for_alpha(double alpha, Index m) {
    return std::sqrt(2.0 * alpha * std::log(static_cast<double>(m)));
}

inline const char* to_string(ExecutionPath p) { return p == ExecutionPath::fast ? "fast" : "dense"; }

inline constexpr std::array<const char*, 5> bench_phases = {"forward", "sketch", "solve", "update", "iteration"};

struct BenchCell {
    ExecutionPath mode = ExecutionPath::fast;
    Index m = 0;
    std::array<double, bench_phases.size()> median_seconds{};
    double mean_active = 0.0;        ///< mean ||h_L||_0 over timed steps
};

struct BenchSlope {
    ExecutionPath mode = ExecutionPath::fast;
    std::string phase;
    double slope = 0.0;
};

struct BenchResult {
    std::vector<BenchCell> cells;
    std::vector<BenchSlope> slopes;  ///< only when >= 3 widths

    const BenchSlope* slope(ExecutionPath mode, std::string_view phase) const {
        for (const auto& s : slopes)
            if (s.mode == mode && s.phase == phase) return &s;
        return nullptr;
    }
};

inline BenchCell bench_cell(const BenchSpec& spec, const Dataset& ds, ExecutionPath mode, Index m) {
    TrainConfig cfg = spec.base;
    cfg.net.m = m;
    cfg.net.d = ds.d();
    if (spec.b_alpha) cfg.net.b = shift_for_alpha(*spec.b_alpha, m);
    cfg.path = mode;
    cfg.continue_on_no_convergence = true;
    cfg.target_residual = 0.0;
    Trainer trainer(cfg, ds.X, ds.y);
    for (int w = 0; w < spec.warmup; ++w) trainer.step();
    std::array<std::vector<double>, bench_phases.size()> samples;
    double active = 0.0;
    for (int r = 0; r < spec.reps; ++r) {
        const IterationMetrics im = trainer.step();
        samples[0].push_back(im.forward_seconds);
        samples[1].push_back(im.sketch_seconds);
        samples[2].push_back(im.solve_seconds);
        samples[3].push_back(im.update_seconds);
        samples[4].push_back(im.iteration_seconds());
        active += im.sparsity.back().mean_nnz;
    }
    BenchCell cell;
    cell.mode = mode;
    cell.m = m;
    for (std::size_t p = 0; p < bench_phases.size(); ++p) cell.median_seconds[p] = median(samples[p]);
    cell.mean_active = active / spec.reps;
    return cell;
}

inline BenchResult run_bench(const BenchSpec& spec) {
    spec.validate();
    const Dataset ds = gen_data(spec.n, spec.base.net.d, spec.data_seed, spec.sep);
    BenchResult out;
    for (ExecutionPath mode : spec.modes)
        for (Index m : spec.widths) out.cells.push_back(bench_cell(spec, ds, mode, m));
    if (spec.widths.size() >= 3) {
        for (ExecutionPath mode : spec.modes) {
            for (std::size_t p = 0; p < bench_phases.size(); ++p) {
                std::vector<double> xs, ys;
                for (const auto& c : out.cells) {
                    if (c.mode != mode) continue;
                    xs.push_back(static_cast<double>(c.m));
                    ys.push_back(std::max(c.median_seconds[p], 1e-12));
                }
                out.slopes.push_back({mode, bench_phases[p], loglog_slope(xs, ys)});
            }
        }
    }
    return out;
}

inline void write_bench_csv(std::ostream& out, const BenchResult& res) {
    write_csv_row(out, {"kind", "mode", "m", "phase", "value"});
    for (const auto& c : res.cells) {
        for (std::size_t p = 0; p < bench_phases.size(); ++p)
            write_csv_row(out, {"median_seconds", to_string(c.mode), std::to_string(c.m), bench_phases[p],
                                format_double(c.median_seconds[p])});
        write_csv_row(out, {"mean_active", to_string(c.mode), std::to_string(c.m), "forward", format_double(c.mean_active)});
    }
    for (const auto& s : res.slopes)
        write_csv_row(out, {"slope", to_string(s.mode), "", s.phase, format_double(s.slope)});
}

}  // namespace subquad

#endif  // SUBQUAD_BENCH_HPP
