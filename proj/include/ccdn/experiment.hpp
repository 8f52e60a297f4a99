#pragma once

// End-to-end runs: data splits, training, evaluation and the two hyper-parameter sweeps.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "ccdn/cocs.hpp"
#include "ccdn/config.hpp"
#include "ccdn/eval.hpp"
#include "ccdn/parallel.hpp"
#include "ccdn/train.hpp"

namespace ccdn {

struct Splits {
    Dataset train, test;
};

/// Synthetic splits (test indices follow the training ones) or `data.dir/{train,test}`.
inline Splits make_splits(const RunConfig& c) {
    Splits s;
    if (c.data.dir.empty()) {
        s.train = synth_generate(c.synth_spec(c.data.train_count));
        s.test = synth_generate(c.synth_spec(c.data.test_count), c.data.train_count);
    } else {
        const std::filesystem::path dir = c.data.dir;
        s.train = load_dataset(dir / "train");
        s.test = load_dataset(dir / "test");
    }
    return s;
}

/// Samples with at least one invisible landmark.
inline Dataset occluded_subset(const Dataset& data) {
    Dataset out;
    for (const auto& s : data)
        if (s.occluded()) out.push_back(s);
    return out;
}

inline TrainOptions train_options(const RunConfig& c) {
    TrainOptions o;
    o.optim = c.optim;
    o.weights = c.loss;
    o.augment = c.augment;
    o.use_augment = c.augment_enabled;
    o.seed = c.seed;
    return o;
}

/// Mean |off-diagonal| of the fused-map correlation matrix on the first `batch` samples.
inline double fused_offdiag(ModelParams& m, const Dataset& data, std::size_t batch) {
    if (!select_variant(m.config).attention) return 0.0;
    NoGradScope off;
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const Tensor img = make_batch(data, order, 0, std::min(batch, data.size())).first;
    const Tensor q = ccdn_forward(img, m, Mode::eval).q_fused;
    const std::size_t p = q.dim(0);
    if (p < 2) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = 0; j < p; ++j)
            if (i != j) s += std::abs(q[i * p + j]);
    return s / static_cast<double>(p * (p - 1));
}

struct RunOutcome {
    ModelParams model;
    TrainResult history;
    EvalResult test;
    double occluded_nme = 0.0;  // mean over the occluded test subset; 0 when it is empty
    std::size_t occluded_count = 0;
    double fused_offdiag = 0.0;
};

inline RunOutcome run_experiment(const RunConfig& c, const Splits& data,
                                 const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
    c.validate();
    RunOutcome r;
    r.model = init_model(c.model, c.seed);
    TrainOptions o = train_options(c);
    o.on_epoch = on_epoch;
    r.history = train(r.model, data.train, data.test, o);
    std::vector<double> nmes = per_image_nme(r.model, data.test);
    std::vector<double> occ;
    for (std::size_t i = 0; i < data.test.size(); ++i)
        if (data.test[i].occluded()) occ.push_back(nmes[i]);
    r.occluded_count = occ.size();
    r.occluded_nme = mean_of(occ);
    r.test = summarize(std::move(nmes), c.eval.ced_max, c.eval.ced_steps, c.eval.failure_threshold);
    r.fused_offdiag = fused_offdiag(r.model, data.test, c.optim.batch_size);
    return r;
}

inline double median(std::vector<double> v) {
    if (v.empty()) throw DegenerateInputError("median of an empty list");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Independent runs on up to CCDN_THREADS workers; results come back in input order.
inline std::vector<RunOutcome> run_many(const std::vector<RunConfig>& configs, const Splits& data) {
    std::vector<RunOutcome> out(configs.size());
    parallel_for(configs.size(), [&](std::size_t i) { out[i] = run_experiment(configs[i], data); });
    return out;
}

// ---------------------------------------------------------------------------------------------
// Sweeps. Each grid point is trained once per seed; the CSV reports the median NME in percent.

struct GammaPoint {
    double gamma1, gamma2, gamma3;
};

/// The grid of the published gamma study, optimum (0.025, 0.01, 0.05) included.
inline std::vector<GammaPoint> default_gamma_grid() {
    return {{0.01, 0.01, 0.01}, {0.01, 0.01, 0.025}, {0.025, 0.01, 0.025}, {0.025, 0.01, 0.05}, {0.025, 0.01, 0.1}};
}

/// Parses "g1:g2:g3,g1:g2:g3,...".
inline std::vector<GammaPoint> parse_gamma_grid(const std::string& text) {
    std::vector<GammaPoint> out;
    std::stringstream ss(text);
    for (std::string item; std::getline(ss, item, ',');) {
        std::stringstream is(item);
        std::vector<double> g;
        for (std::string part; std::getline(is, part, ':');) {
            double x = 0.0;
            if (!detail::parse_number(detail::trim(part), x) || x < 0.0) {
                throw ConfigError("gamma sweep: bad value '" + part + "' in '" + item + "'");
            }
            g.push_back(x);
        }
        if (g.size() != 3) throw ConfigError("gamma sweep: expected g1:g2:g3, got '" + item + "'");
        out.push_back({g[0], g[1], g[2]});
    }
    if (out.empty()) throw ConfigError("gamma sweep: no values");
    return out;
}

inline std::vector<std::size_t> parse_count_list(const std::string& text) {
    std::vector<std::size_t> out;
    if (!detail::parse_list(text, out) || out.empty()) throw ConfigError("excitation sweep: bad values '" + text + "'");
    for (std::size_t p : out)
        if (p == 0) throw ConfigError("excitation sweep: counts must be >= 1");
    return out;
}

struct SweepRow {
    std::vector<double> key;            // gamma triple or {P}
    std::vector<double> test_nme;       // per seed
    std::vector<double> occluded_nme;   // per seed
};

inline std::vector<SweepRow> run_sweep(const RunConfig& base, const std::vector<std::vector<double>>& keys,
                                       const std::function<void(RunConfig&, const std::vector<double>&)>& apply,
                                       const std::vector<std::uint64_t>& seeds, const Splits& data) {
    std::vector<RunConfig> configs;
    for (const auto& k : keys)
        for (std::uint64_t s : seeds) {
            RunConfig c = base;
            apply(c, k);
            c.seed = s;
            configs.push_back(c);
        }
    const auto runs = run_many(configs, data);
    std::vector<SweepRow> rows;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        SweepRow row{keys[i], {}, {}};
        for (std::size_t j = 0; j < seeds.size(); ++j) {
            const auto& r = runs[i * seeds.size() + j];
            row.test_nme.push_back(r.test.mean_nme);
            row.occluded_nme.push_back(r.occluded_nme);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::vector<SweepRow> sweep_gamma(const RunConfig& base, const std::vector<GammaPoint>& grid,
                                         const std::vector<std::uint64_t>& seeds, const Splits& data) {
    std::vector<std::vector<double>> keys;
    for (const auto& g : grid) keys.push_back({g.gamma1, g.gamma2, g.gamma3});
    return run_sweep(base, keys, [](RunConfig& c, const std::vector<double>& k) { c.loss = {k[0], k[1], k[2]}; },
                     seeds, data);
}

inline std::vector<SweepRow> sweep_excitations(const RunConfig& base, const std::vector<std::size_t>& counts,
                                               const std::vector<std::uint64_t>& seeds, const Splits& data) {
    std::vector<std::vector<double>> keys;
    for (std::size_t p : counts) keys.push_back({static_cast<double>(p)});
    return run_sweep(base, keys,
                     [](RunConfig& c, const std::vector<double>& k) { c.model.excitations = static_cast<std::size_t>(k[0]); },
                     seeds, data);
}

/// gamma1,gamma2,gamma3,nme_pct: one row per grid point, NME on the occluded test subset.
inline void write_gamma_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.precision(10);
    out << "gamma1,gamma2,gamma3,nme_pct\n";
    for (const auto& r : rows) {
        out << r.key[0] << ',' << r.key[1] << ',' << r.key[2] << ',' << 100.0 * median(r.occluded_nme) << '\n';
    }
}

/// excitations,test_nme_pct,occluded_nme_pct: one row per excitation count, one column per split.
inline void write_excitation_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.precision(10);
    out << "excitations,test_nme_pct,occluded_nme_pct\n";
    for (const auto& r : rows) {
        out << static_cast<std::size_t>(r.key[0]) << ',' << 100.0 * median(r.test_nme) << ','
            << 100.0 * median(r.occluded_nme) << '\n';
    }
}

}  // namespace ccdn
