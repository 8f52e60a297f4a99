// ccdn: command-line front end. See `ccdn --help`.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "ccdn/ccdn.hpp"

namespace fs = std::filesystem;
using namespace ccdn;

namespace {

// Usage problems (bad flags, missing or invalid config) exit with 2; everything else with 1.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigFlags {
    std::string config;
    std::vector<std::string> overrides;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config, "key = value config file");
        cmd->add_option("--set", overrides, "override one key, e.g. --set optim.epochs=5")->take_all();
    }

    RunConfig load() const {
        try {
            RunConfig c;
            if (!config.empty()) {
                if (!fs::exists(config)) throw UsageError("config file not found: " + config);
                c = load_config(config);
            }
            for (const auto& kv : overrides) {
                const auto eq = kv.find('=');
                if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
                set_config_value(c, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)), "--set");
            }
            c.validate();
            return c;
        } catch (const ConfigError& e) {
            throw UsageError(e.what());
        }
    }
};

fs::path prepare_out(const std::string& out) {
    fs::create_directories(out);
    return out;
}

void print_epoch(const EpochMetrics& e, std::size_t total) {
    std::printf("epoch %zu/%zu  lr %.3g  train_loss %.6f  eval_nme %.6f  L(Qt) %.4f  L(Qt-1) %.4f  L(Qg) %.4f\n",
                e.epoch, total, e.lr, e.train_loss, e.eval_nme, e.loss_qt, e.loss_qt1, e.loss_qg);
    std::fflush(stdout);
}

void report_eval(const EvalResult& r, const Dataset& test, double threshold) {
    std::vector<double> occ;
    for (std::size_t i = 0; i < test.size(); ++i)
        if (test[i].occluded()) occ.push_back(r.nme[i]);
    std::printf("images %zu  mean NME %.4f%%  failure rate (NME > %.0f%%) %.2f%%\n", r.nme.size(), 100.0 * r.mean_nme,
                100.0 * threshold, 100.0 * r.failure_rate);
    if (!occ.empty()) std::printf("occluded subset %zu images  mean NME %.4f%%\n", occ.size(), 100.0 * mean_of(occ));
}

int cmd_synth(const ConfigFlags& flags, const std::string& out) {
    const RunConfig c = flags.load();
    const fs::path dir = prepare_out(out);
    save_dataset(dir / "train", synth_generate(c.synth_spec(c.data.train_count)));
    save_dataset(dir / "test", synth_generate(c.synth_spec(c.data.test_count), c.data.train_count));
    std::printf("wrote %zu training and %zu test samples to %s\n", c.data.train_count, c.data.test_count,
                dir.string().c_str());
    return 0;
}

int cmd_train(const ConfigFlags& flags, const std::string& data_dir, const std::string& out) {
    RunConfig c = flags.load();
    if (!data_dir.empty()) c.data.dir = data_dir;
    const fs::path dir = prepare_out(out);
    const Splits data = make_splits(c);
    ModelParams m = init_model(c.model, c.seed);
    std::printf("variant %s  parameters %zu  train %zu  test %zu\n", to_string(c.model.variant).c_str(),
                parameter_count(m), data.train.size(), data.test.size());
    TrainOptions o = train_options(c);
    std::vector<EpochMetrics> rows;
    o.on_epoch = [&](const EpochMetrics& e) {
        rows.push_back(e);
        write_metrics_csv(dir / "metrics.csv", rows);
        print_epoch(e, c.optim.epochs);
    };
    const TrainResult tr = train(m, data.train, data.test, o);
    if (rows.empty()) write_metrics_csv(dir / "metrics.csv", rows);
    save_checkpoint(m, c, dir / "checkpoint.ck");
    if (!data.test.empty()) {
        const EvalResult r = summarize(per_image_nme(m, data.test), c.eval.ced_max, c.eval.ced_steps,
                                       c.eval.failure_threshold);
        write_ced_csv(dir / "ced.csv", r.ced);
        write_nme_csv(dir / "nme.csv", r.nme);
        std::printf("untrained NME %.4f%%\n", 100.0 * tr.untrained_nme);
        report_eval(r, data.test, c.eval.failure_threshold);
    }
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& out) {
    Checkpoint ck = load_checkpoint(checkpoint);
    RunConfig& c = ck.config;
    if (!data_dir.empty()) c.data.dir = data_dir;
    Dataset test;
    if (c.data.dir.empty()) test = synth_generate(c.synth_spec(c.data.test_count), c.data.train_count);
    else test = load_dataset(fs::path(c.data.dir) / "test");
    if (test.empty()) throw std::runtime_error("no test samples");
    const EvalResult r =
        summarize(per_image_nme(ck.model, test), c.eval.ced_max, c.eval.ced_steps, c.eval.failure_threshold);
    const fs::path dir = prepare_out(out);
    write_ced_csv(dir / "ced.csv", r.ced);
    write_nme_csv(dir / "nme.csv", r.nme);
    report_eval(r, test, c.eval.failure_threshold);
    return 0;
}

int cmd_gradcheck(std::size_t trials, std::uint64_t seed) {
    std::printf("%-24s %7s %12s %9s %8s  %s\n", "case", "trials", "max_rel_err", "tol", "seconds", "result");
    bool all = true;
    for (const auto& gc : gradient_cases()) {
        const GradCaseResult r = run_grad_case(gc, trials, seed);
        all = all && r.passed();
        std::printf("%-24s %7zu %12.3e %9.0e %8.2f  %s\n", r.name.c_str(), r.trials, r.worst, r.tol, r.seconds,
                    r.passed() ? "pass" : "FAIL");
        std::fflush(stdout);
    }
    std::printf("%s\n", all ? "all cases passed" : "some cases FAILED");
    return all ? 0 : 1;
}

int cmd_activations(const std::string& checkpoint, const std::string& data_dir, std::size_t index,
                    const std::string& out) {
    Checkpoint ck = load_checkpoint(checkpoint);
    RunConfig& c = ck.config;
    Sample s;
    if (!data_dir.empty()) {
        const Dataset test = load_dataset(fs::path(data_dir) / "test");
        if (index >= test.size()) throw UsageError("--index beyond the test set");
        s = test[index];
    } else {
        s = synth_sample(c.synth_spec(c.data.test_count), c.data.train_count + index);
    }
    const fs::path dir = prepare_out(out);
    save_image(dir / "input.pgm", s.image);
    const std::pair<Stage, const char*> stages[] = {
        {Stage::last, "last"}, {Stage::penultimate, "penultimate"}, {Stage::fused, "fused"}};
    for (const auto& [stage, name] : stages)
        for (std::size_t p = 0; p < c.model.excitations; ++p) {
            const fs::path f = dir / ("activation_" + std::string(name) + "_p" + std::to_string(p) + ".pgm");
            save_image(f, activation_map(ck.model, s.image, stage, p));
            std::printf("%s\n", f.string().c_str());
        }
    return 0;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text, std::uint64_t base) {
    if (text.empty()) return {base, base + 1, base + 2};
    std::vector<std::size_t> v;
    if (!detail::parse_list(text, v) || v.empty()) throw UsageError("--seeds expects a comma list of integers");
    return {v.begin(), v.end()};
}

int cmd_sweep(const ConfigFlags& flags, const std::string& axis, const std::string& values,
              const std::string& seeds_text, const std::string& out) {
    const RunConfig c = flags.load();
    const auto seeds = parse_seeds(seeds_text, c.seed);
    const fs::path dir = prepare_out(out);
    const Splits data = make_splits(c);
    std::vector<SweepRow> rows;
    try {
        if (axis == "gamma") {
            rows = sweep_gamma(c, values.empty() ? default_gamma_grid() : parse_gamma_grid(values), seeds, data);
            write_gamma_csv(dir / "sweep.csv", rows);
        } else {
            rows = sweep_excitations(c, values.empty() ? std::vector<std::size_t>{1, 2, 3, 4} : parse_count_list(values),
                                     seeds, data);
            write_excitation_csv(dir / "sweep.csv", rows);
        }
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
    std::ifstream csv(dir / "sweep.csv");
    std::cout << csv.rdbuf();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross-order cross-semantic landmark detection toolkit"};
    app.require_subcommand(1);

    ConfigFlags synth_flags, train_flags, sweep_flags;
    std::string out, data_dir, checkpoint, axis, values, seeds;
    std::size_t trials = 20, index = 0;
    std::uint64_t seed = 0;

    auto* synth = app.add_subcommand("synth-data", "render the synthetic train/test splits to disk");
    synth_flags.attach(synth);
    synth->add_option("--out", out, "output directory")->required();

    auto* train = app.add_subcommand("train", "train a model; writes metrics.csv, checkpoint.ck, ced.csv");
    train_flags.attach(train);
    train->add_option("--data", data_dir, "dataset directory from synth-data (default: synthesize in memory)");
    train->add_option("--out", out, "output directory")->required();

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on its test split; writes ced.csv, nme.csv");
    eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
    eval->add_option("--data", data_dir, "dataset directory (default: the checkpoint's synthetic split)");
    eval->add_option("--out", out, "output directory")->required();

    auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every primitive and chain");
    grad->add_option("--trials", trials, "random trials per case")->check(CLI::PositiveNumber);
    grad->add_option("--seed", seed, "seed for the random inputs");

    auto* act = app.add_subcommand("export-activations", "write per-excitation activation maps as PGM");
    act->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
    act->add_option("--data", data_dir, "dataset directory (default: the checkpoint's synthetic split)");
    act->add_option("--index", index, "test sample index");
    act->add_option("--out", out, "output directory")->required();

    auto* sweep = app.add_subcommand("sweep", "gamma or excitation-count sweep; writes sweep.csv");
    sweep_flags.attach(sweep);
    sweep->add_option("--axis", axis, "gamma | excitations")->required()->check(CLI::IsMember({"gamma", "excitations"}));
    sweep->add_option("--values", values, "gamma: g1:g2:g3,...  excitations: 1,2,3,4");
    sweep->add_option("--seeds", seeds, "comma list (default: seed, seed+1, seed+2)");
    sweep->add_option("--out", out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*synth) return cmd_synth(synth_flags, out);
        if (*train) return cmd_train(train_flags, data_dir, out);
        if (*eval) return cmd_eval(checkpoint, data_dir, out);
        if (*grad) return cmd_gradcheck(trials, seed);
        if (*act) return cmd_activations(checkpoint, data_dir, index, out);
        if (*sweep) return cmd_sweep(sweep_flags, axis, values, seeds, out);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
