// subquad: data generation, training runs, timing sweeps and check suites.
//
// Exit codes: 0 success, 1 usage/config, 2 numerical non-convergence, 3 I/O.

#include "subquad/subquad.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace {

using namespace subquad;

constexpr int exit_ok = 0;
constexpr int exit_config = 1;
constexpr int exit_numeric = 2;
constexpr int exit_io = 3;

int exit_code_for(ErrorCode code) {
    switch (code) {
    case ErrorCode::io: return exit_io;
    case ErrorCode::no_convergence:
    case ErrorCode::singular_gram:
    case ErrorCode::rank_deficient: return exit_numeric;
    default: return exit_config;
    }
}

std::ofstream open_output(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::io, "cannot write '" + path + "'");
    return out;
}

void close_output(std::ofstream& out, const std::string& path) {
    out.close();
    if (!out) throw Error(ErrorCode::io, "write failed for '" + path + "'");
}

std::optional<std::uint64_t> seed_override;

int run_train(const std::string& config_path, const std::string& data_path, const std::string& out_path) {
    ConfigMap cm = read_config(config_path);
    reject_unknown_keys(cm, train_config_keys());
    const Dataset ds = read_dataset(data_path);
    if (!cm.contains("d")) cm["d"] = std::to_string(ds.d());
    if (seed_override) cm["seed"] = std::to_string(*seed_override);
    const TrainConfig cfg = train_config_from(cm);
    require(cfg.net.d == ds.d(), ErrorCode::config, "config d does not match the dataset");

    Trainer trainer(cfg, ds.X, ds.y);
    const auto rows = trainer.train();
    for (const auto& r : rows)
        if (r.trust_region_exceeded)
            std::cerr << "warning: step " << r.t << " weight movement " << format_double(r.movement)
                      << " exceeds trust radius " << format_double(cfg.trust_radius) << "/sqrt(m)\n";

    std::ofstream out = open_output(out_path);
    write_metrics_csv(out, cfg.net.L, rows);
    close_output(out, out_path);
    const auto& last = rows.back();
    std::cerr << "lambda_hat=" << format_double(trainer.lambda_hat()) << " eps0=" << format_double(trainer.epsilon0())
              << " steps=" << trainer.steps_taken() << " final_residual=" << format_double(last.residual) << '\n';
    return last.residual <= cfg.target_residual ? exit_ok : exit_numeric;
}

std::vector<Index> parse_width_list(const std::string& s) {
    std::vector<Index> out;
    std::string_view sv = s;
    while (!sv.empty()) {
        const auto comma = sv.find(',');
        out.push_back(parse_integer<Index>(trim(sv.substr(0, comma)), "--m"));
        if (comma == std::string_view::npos) break;
        sv.remove_prefix(comma + 1);
    }
    return out;
}

int run_bench_cmd(const std::string& config_path, const std::string& widths, int reps, const std::string& out_path) {
    ConfigMap cm = read_config(config_path);
    auto keys = train_config_keys();
    keys.insert({"n", "sep", "data_seed", "b_alpha", "warmup", "modes"});
    reject_unknown_keys(cm, keys);
    if (seed_override) cm["seed"] = std::to_string(*seed_override);

    BenchSpec spec;
    ConfigMap train_keys;
    for (const auto& [k, v] : cm) {
        if (k == "n") spec.n = parse_integer<Index>(v, k);
        else if (k == "sep") spec.sep = parse_double(v, k);
        else if (k == "data_seed") spec.data_seed = parse_integer<std::uint64_t>(v, k);
        else if (k == "b_alpha") spec.b_alpha = parse_double(v, k);
        else if (k == "warmup") spec.warmup = parse_integer<int>(v, k);
        else if (k == "modes") {
            spec.modes.clear();
            for (std::string_view rest = v; !rest.empty();) {
                const auto comma = rest.find(',');
                const auto tok = trim(rest.substr(0, comma));
                if (tok == "fast") spec.modes.push_back(ExecutionPath::fast);
                else if (tok == "dense") spec.modes.push_back(ExecutionPath::dense);
                else throw Error(ErrorCode::config, "modes must list fast and/or dense");
                if (comma == std::string_view::npos) break;
                rest.remove_prefix(comma + 1);
            }
        } else train_keys[k] = v;
    }
    if (spec.b_alpha && train_keys.contains("b")) throw Error(ErrorCode::config, "set either b or b_alpha, not both");
    if (!widths.empty()) {
        spec.widths = parse_width_list(widths);
    } else if (auto it = train_keys.find("m"); it != train_keys.end()) {
        spec.widths = {parse_integer<Index>(it->second, "m")};
    }
    spec.reps = reps;
    spec.base = train_config_from(train_keys);
    const BenchResult res = run_bench(spec);
    std::ofstream out = open_output(out_path);
    write_bench_csv(out, res);
    close_output(out, out_path);
    return exit_ok;
}

int run_gen_data(Index n, Index d, double sep, std::uint64_t seed, const std::string& out_path) {
    const Dataset ds = gen_data(n, d, seed, sep);
    write_dataset(out_path, ds);
    return exit_ok;
}

int run_check(const std::string& suite, std::uint64_t seed, const std::string& config_path) {
    std::optional<TrainConfig> cfg;
    if (!config_path.empty()) {
        ConfigMap cm = read_config(config_path);
        reject_unknown_keys(cm, train_config_keys());
        cfg = train_config_from(cm);
    }
    bool all = true;
    for (const auto& r : run_suite(suite, seed, cfg)) {
        std::cout << format_check(r) << '\n';
        all = all && r.pass;
    }
    std::cout << "suite=" << suite << " status=" << (all ? "pass" : "fail") << '\n';
    return all ? exit_ok : exit_numeric;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sparse shifted-ReLU network training with sketched Gram regression"};
    app.require_subcommand(1);
    std::uint64_t seed_opt = 0;
    app.add_option("--seed-override", seed_opt, "Replace the config seed");

    std::string config, data, out, widths, suite = "lrm";
    int reps = 5;
    Index n = 0, d = 0;
    double sep = 0.0;
    std::uint64_t seed = 0;

    auto* train = app.add_subcommand("train", "Train the last layer and write per-iteration metrics");
    train->add_option("--config", config, "key = value config file")->required();
    train->add_option("--data", data, "Dataset file")->required();
    train->add_option("--out", out, "Output CSV")->required();

    auto* bench = app.add_subcommand("bench", "Per-iteration timing sweep over m");
    bench->add_option("--config", config, "key = value config file")->required();
    bench->add_option("--m", widths, "Comma-separated widths");
    bench->add_option("--reps", reps, "Timed repetitions per width")->check(CLI::Range(3, 1000));
    bench->add_option("--out", out, "Output CSV")->required();

    auto* gen = app.add_subcommand("gen-data", "Generate a unit-norm dataset");
    gen->add_option("--n", n, "Sample count")->required();
    gen->add_option("--d", d, "Input dimension")->required();
    gen->add_option("--sep", sep, "Minimum pairwise distance");
    gen->add_option("--seed", seed, "Seed");
    gen->add_option("--out", out, "Output file")->required();

    auto* check = app.add_subcommand("check", "Run a statistical check suite");
    check->add_option("--suite", suite, "lrm, sketch, ntk or solver")->required();
    check->add_option("--seed", seed, "Seed");
    check->add_option("--config", config, "Optional config validated against the suite");

    std::vector<std::pair<CLI::App*, std::string>> aliases;
    for (const auto& [name, target] : {std::pair{"lrm-check", "lrm"}, {"sketch-test", "sketch"}, {"ntk-check", "ntk"}}) {
        auto* sub = app.add_subcommand(name, std::string("Alias for check --suite ") + target);
        sub->add_option("--seed", seed, "Seed");
        sub->add_option("--config", config, "Optional config");
        aliases.emplace_back(sub, target);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? exit_ok : exit_config;
    }
    if (app.count("--seed-override")) seed_override = seed_opt;

    try {
        if (*train) return run_train(config, data, out);
        if (*bench) return run_bench_cmd(config, widths, reps, out);
        if (*gen) return run_gen_data(n, d, sep, seed, out);
        if (*check) return run_check(suite, seed, config);
        for (const auto& [sub, target] : aliases)
            if (*sub) return run_check(target, seed, config);
    } catch (const NoConvergenceError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_numeric;
    } catch (const Error& e) {
        std::cerr << "error (" << to_string(e.code()) << "): " << e.what() << '\n';
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_config;
    }
    return exit_config;
}
