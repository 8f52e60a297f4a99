#pragma once

// Run configuration: `key = value` lines with `#` comments. Every field has a default, unknown keys
// are rejected, and to_text() writes a file that parses back to the same configuration.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "ccdn/backbone.hpp"
#include "ccdn/data.hpp"
#include "ccdn/errors.hpp"
#include "ccdn/train.hpp"

namespace ccdn {

struct DataConfig {
    std::size_t train_count = 2000;
    std::size_t test_count = 500;
    double pose_sigma = 0.25;
    double occlusion_prob = 0.5;
    double occlusion_max_frac = 0.4;
    double noise_sigma = 0.03;
    std::string dir;  // empty: synthesize in memory
};

struct EvalConfig {
    double failure_threshold = 0.10;
    double ced_max = 0.10;
    std::size_t ced_steps = 21;
};

struct RunConfig {
    ModelConfig model;
    DataConfig data;
    AugmentConfig augment;
    bool augment_enabled = true;
    OptimConfig optim;
    LossWeights loss;
    EvalConfig eval;
    std::uint64_t seed = 0;

    /// Synthetic split specs. Test samples continue the index sequence after the training ones.
    SynthSpec synth_spec(std::size_t count) const {
        SynthSpec s;
        s.count = count;
        s.landmarks = model.landmarks;
        s.image_size = model.input_size;
        s.pose_sigma = data.pose_sigma;
        s.occlusion_prob = data.occlusion_prob;
        s.occlusion_max_frac = data.occlusion_max_frac;
        s.noise_sigma = data.noise_sigma;
        s.seed = seed;
        return s;
    }

    void validate() const {
        model.validate();
        synth_spec(1).validate();
        if (model.image_channels != 1 && data.dir.empty()) {
            throw ConfigError("model.image_channels: the synthetic generator renders grayscale only");
        }
        if (optim.batch_size == 0) throw ConfigError("optim.batch_size must be >= 1");
        if (!(optim.lr > 0.0)) throw ConfigError("optim.lr must be positive");
        if (optim.momentum < 0.0 || optim.momentum >= 1.0) throw ConfigError("optim.momentum must lie in [0,1)");
        if (loss.gamma1 < 0.0 || loss.gamma2 < 0.0 || loss.gamma3 < 0.0) throw ConfigError("loss.gamma* must be >= 0");
        if (eval.ced_steps < 2) throw ConfigError("eval.ced_steps must be >= 2");
    }
};

namespace detail {

// Seeds get their own alternative: std::uint64_t and std::size_t may be the same type.
struct SeedRef {
    std::uint64_t* p;
};

using FieldRef =
    std::variant<std::size_t*, double*, SeedRef, bool*, Variant*, std::vector<std::size_t>*, std::string*>;

struct Field {
    const char* key;
    FieldRef ref;
};

inline std::vector<Field> fields(RunConfig& c) {
    return {
        {"model.stacks", &c.model.stacks},
        {"model.channels", &c.model.channels},
        {"model.excitations", &c.model.excitations},
        {"model.input_size", &c.model.input_size},
        {"model.image_channels", &c.model.image_channels},
        {"model.landmarks", &c.model.landmarks},
        {"model.variant", &c.model.variant},
        {"model.ns_iters", &c.model.ns_iters},
        {"model.deconv_kernel", &c.model.deconv_kernel},
        {"model.hourglass_depth", &c.model.hourglass_depth},
        {"data.train_count", &c.data.train_count},
        {"data.test_count", &c.data.test_count},
        {"data.pose_sigma", &c.data.pose_sigma},
        {"data.occlusion_prob", &c.data.occlusion_prob},
        {"data.occlusion_max_frac", &c.data.occlusion_max_frac},
        {"data.noise_sigma", &c.data.noise_sigma},
        {"data.dir", &c.data.dir},
        {"augment.enabled", &c.augment_enabled},
        {"augment.rotation_sigma_deg", &c.augment.rotation_sigma_deg},
        {"augment.scale_sigma", &c.augment.scale_sigma},
        {"optim.lr", &c.optim.lr},
        {"optim.momentum", &c.optim.momentum},
        {"optim.milestones", &c.optim.milestones},
        {"optim.decay", &c.optim.decay},
        {"optim.epochs", &c.optim.epochs},
        {"optim.batch_size", &c.optim.batch_size},
        {"loss.gamma1", &c.loss.gamma1},
        {"loss.gamma2", &c.loss.gamma2},
        {"loss.gamma3", &c.loss.gamma3},
        {"eval.failure_threshold", &c.eval.failure_threshold},
        {"eval.ced_max", &c.eval.ced_max},
        {"eval.ced_steps", &c.eval.ced_steps},
        {"seed", SeedRef{&c.seed}},
    };
}

inline std::string trim(std::string_view s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string_view::npos) return {};
    const auto b = s.find_last_not_of(" \t\r");
    return std::string(s.substr(a, b - a + 1));
}

template <class T>
bool parse_number(const std::string& s, T& out) {
    const char* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc() && ptr == end;
}

inline bool parse_list(const std::string& v, std::vector<std::size_t>& out) {
    std::vector<std::size_t> items;
    std::stringstream ss(v);
    for (std::string item; std::getline(ss, item, ',');) {
        std::size_t x = 0;
        if (!parse_number(trim(item), x)) return false;
        items.push_back(x);
    }
    out = std::move(items);
    return true;
}

inline bool parse_value(const std::string& v, FieldRef ref) {
    const bool negative = !v.empty() && v[0] == '-';
    return std::visit(
        [&](auto r) -> bool {
            using R = decltype(r);
            if constexpr (std::is_same_v<R, SeedRef>) {
                return !negative && parse_number(v, *r.p);
            } else if constexpr (std::is_same_v<R, std::size_t*>) {
                return !negative && parse_number(v, *r);
            } else if constexpr (std::is_same_v<R, double*>) {
                return parse_number(v, *r) && std::isfinite(*r);
            } else if constexpr (std::is_same_v<R, bool*>) {
                if (v != "true" && v != "false" && v != "1" && v != "0") return false;
                *r = v == "true" || v == "1";
                return true;
            } else if constexpr (std::is_same_v<R, Variant*>) {
                *r = parse_variant(v);
                return true;
            } else if constexpr (std::is_same_v<R, std::vector<std::size_t>*>) {
                return parse_list(v, *r);
            } else {
                *r = v;
                return true;
            }
        },
        ref);
}

inline std::string format_value(FieldRef ref) {
    return std::visit(
        [](auto r) -> std::string {
            using R = decltype(r);
            if constexpr (std::is_same_v<R, SeedRef>) {
                return std::to_string(*r.p);
            } else if constexpr (std::is_same_v<R, std::size_t*>) {
                return std::to_string(*r);
            } else if constexpr (std::is_same_v<R, double*>) {
                char buf[32];
                auto [end, ec] = std::to_chars(buf, buf + sizeof buf, *r);  // shortest exact form
                return std::string(buf, end);
            } else if constexpr (std::is_same_v<R, bool*>) {
                return *r ? "true" : "false";
            } else if constexpr (std::is_same_v<R, Variant*>) {
                return to_string(*r);
            } else if constexpr (std::is_same_v<R, std::vector<std::size_t>*>) {
                std::string s;
                for (std::size_t i = 0; i < r->size(); ++i) s += (i ? "," : "") + std::to_string((*r)[i]);
                return s;
            } else {
                return *r;
            }
        },
        ref);
}

}  // namespace detail

/// Applies one `key = value` assignment; `where` prefixes error messages.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value,
                             const std::string& where = "config") {
    for (auto& f : detail::fields(c)) {
        if (key != f.key) continue;
        bool ok = false;
        try {
            ok = detail::parse_value(value, f.ref);
        } catch (const ConfigError&) {
            ok = false;
        }
        if (!ok) throw ConfigError(where + ": invalid value '" + value + "' for key " + key);
        return;
    }
    throw ConfigError(where + ": unknown key " + key);
}

inline RunConfig parse_config(std::istream& in, const std::string& origin = "config") {
    RunConfig c;
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string body = detail::trim(line);
        if (body.empty()) continue;
        const std::string where = origin + ":" + std::to_string(lineno);
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
        set_config_value(c, detail::trim(body.substr(0, eq)), detail::trim(body.substr(eq + 1)), where);
    }
    c.validate();
    return c;
}

inline RunConfig parse_config_text(const std::string& text, const std::string& origin = "config") {
    std::istringstream in(text);
    return parse_config(in, origin);
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    return parse_config(in, path.string());
}

inline std::string to_text(const RunConfig& config) {
    RunConfig c = config;
    std::string out;
    for (const auto& f : detail::fields(c)) out += std::string(f.key) + " = " + detail::format_value(f.ref) + "\n";
    return out;
}

}  // namespace ccdn
