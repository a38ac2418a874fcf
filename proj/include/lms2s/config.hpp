#pragma once

// Flat key=value configuration. The documented key list below is the single
// source of truth: unknown keys are rejected, defaults fill absent keys,
// command-line overrides win over the file, and the full effective config is
// echoed (each consumed key exactly once).

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "lms2s/common.hpp"

namespace lms2s {

enum class Precision { F32, F64 };

struct SacConfig {
    double k = 100.0;
    double b = 25.0;
    double target = 0.55;       // terminate when S_c reaches this
    std::size_t max_steps = 500;  // total environment-step budget
    std::size_t horizon = 50;     // per-episode step cap
    double lr = 3e-4;
    std::size_t batch = 64;
    std::size_t buffer = 10000;
    double gamma = 0.99;
    double tau = 0.005;
    std::size_t hidden = 64;
    std::size_t warmup = 200;   // persistent-random exploration steps before policy control
    std::size_t silhouette_sample = 512;
    std::size_t init_candidates = 32;  // silhouette-screened classifier starts
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    Precision precision = Precision::F64;
    std::size_t hidden_dim = 200;
    std::size_t latent_dim = 200;
    std::size_t embed_dim = 150;
    double dropout = 0.2;
    double learning_rate = 0.001;
    std::size_t epochs = 10;
    std::size_t batch_size = 16;
    std::size_t n_filters = 2;
    bool bidirectional = true;
    std::size_t max_len = 30;
    std::size_t early_stop_patience = 3;
    double enhancer_gain = 1.0;
    double grad_clip = 5.0;  // global-norm gradient clip; 0 disables

    std::string train_file;
    std::string valid_file;
    std::string out_dir = ".";

    std::size_t gen_pairs = 600;
    double gen_mix = 0.5;
    std::size_t gen_alphabet = 40;
    std::size_t gen_min_len = 4;
    std::size_t gen_max_len = 9;
    double gen_tilt = 0.85;
    double gen_len_tilt = 1.0;
    double gen_valid_fraction = 0.2;

    SacConfig sac;
};

// Every documented key, in echo order, with its current value rendered.
inline std::vector<std::pair<std::string, std::string>> config_items(const PipelineConfig& c) {
    auto fmt = [](double v) {
        std::ostringstream os;
        os.precision(17);
        os << v;
        return os.str();
    };
    return {
        {"seed", std::to_string(c.seed)},
        {"precision", c.precision == Precision::F32 ? "f32" : "f64"},
        {"hidden_dim", std::to_string(c.hidden_dim)},
        {"latent_dim", std::to_string(c.latent_dim)},
        {"embed_dim", std::to_string(c.embed_dim)},
        {"dropout", fmt(c.dropout)},
        {"learning_rate", fmt(c.learning_rate)},
        {"epochs", std::to_string(c.epochs)},
        {"batch_size", std::to_string(c.batch_size)},
        {"n_filters", std::to_string(c.n_filters)},
        {"bidirectional", c.bidirectional ? "true" : "false"},
        {"max_len", std::to_string(c.max_len)},
        {"early_stop_patience", std::to_string(c.early_stop_patience)},
        {"enhancer_gain", fmt(c.enhancer_gain)},
        {"grad_clip", fmt(c.grad_clip)},
        {"train_file", c.train_file},
        {"valid_file", c.valid_file},
        {"out_dir", c.out_dir},
        {"gen_pairs", std::to_string(c.gen_pairs)},
        {"gen_mix", fmt(c.gen_mix)},
        {"gen_alphabet", std::to_string(c.gen_alphabet)},
        {"gen_min_len", std::to_string(c.gen_min_len)},
        {"gen_max_len", std::to_string(c.gen_max_len)},
        {"gen_tilt", fmt(c.gen_tilt)},
        {"gen_len_tilt", fmt(c.gen_len_tilt)},
        {"gen_valid_fraction", fmt(c.gen_valid_fraction)},
        {"sac_k", fmt(c.sac.k)},
        {"sac_b", fmt(c.sac.b)},
        {"sac_target", fmt(c.sac.target)},
        {"sac_max_steps", std::to_string(c.sac.max_steps)},
        {"sac_horizon", std::to_string(c.sac.horizon)},
        {"sac_lr", fmt(c.sac.lr)},
        {"sac_batch", std::to_string(c.sac.batch)},
        {"sac_buffer", std::to_string(c.sac.buffer)},
        {"sac_gamma", fmt(c.sac.gamma)},
        {"sac_tau", fmt(c.sac.tau)},
        {"sac_hidden", std::to_string(c.sac.hidden)},
        {"sac_warmup", std::to_string(c.sac.warmup)},
        {"sac_init_candidates", std::to_string(c.sac.init_candidates)},
        {"sac_silhouette_sample", std::to_string(c.sac.silhouette_sample)},
    };
}

inline std::string config_echo(const PipelineConfig& c) {
    std::ostringstream os;
    for (const auto& [k, v] : config_items(c)) os << k << '=' << v << '\n';
    return os.str();
}

namespace detail {

inline double parse_double(const std::string& key, const std::string& value) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(value, &used);
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' needs a numeric value, got '" + value + "'");
    }
    if (used != value.size() || !std::isfinite(v))
        throw ConfigError("config: key '" + key + "' needs a numeric value, got '" + value + "'");
    return v;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(value, &used);
    } catch (const std::exception&) {
        throw ConfigError("config: key '" + key + "' needs a non-negative integer, got '" + value +
                          "'");
    }
    if (used != value.size())
        throw ConfigError("config: key '" + key + "' needs a non-negative integer, got '" + value +
                          "'");
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true") return true;
    if (value == "false") return false;
    throw ConfigError("config: key '" + key + "' needs true or false, got '" + value + "'");
}

inline void apply_key(PipelineConfig& c, const std::string& key, const std::string& value) {
    if (key == "seed") c.seed = parse_u64(key, value);
    else if (key == "precision") {
        if (value == "f32") c.precision = Precision::F32;
        else if (value == "f64") c.precision = Precision::F64;
        else throw ConfigError("config: key 'precision' must be f32 or f64, got '" + value + "'");
    }
    else if (key == "hidden_dim") c.hidden_dim = parse_u64(key, value);
    else if (key == "latent_dim") c.latent_dim = parse_u64(key, value);
    else if (key == "embed_dim") c.embed_dim = parse_u64(key, value);
    else if (key == "dropout") c.dropout = parse_double(key, value);
    else if (key == "learning_rate") c.learning_rate = parse_double(key, value);
    else if (key == "epochs") c.epochs = parse_u64(key, value);
    else if (key == "batch_size") c.batch_size = parse_u64(key, value);
    else if (key == "n_filters") c.n_filters = parse_u64(key, value);
    else if (key == "bidirectional") c.bidirectional = parse_bool(key, value);
    else if (key == "max_len") c.max_len = parse_u64(key, value);
    else if (key == "early_stop_patience") c.early_stop_patience = parse_u64(key, value);
    else if (key == "enhancer_gain") c.enhancer_gain = parse_double(key, value);
    else if (key == "grad_clip") c.grad_clip = parse_double(key, value);
    else if (key == "train_file") c.train_file = value;
    else if (key == "valid_file") c.valid_file = value;
    else if (key == "out_dir") c.out_dir = value;
    else if (key == "gen_pairs") c.gen_pairs = parse_u64(key, value);
    else if (key == "gen_mix") c.gen_mix = parse_double(key, value);
    else if (key == "gen_alphabet") c.gen_alphabet = parse_u64(key, value);
    else if (key == "gen_min_len") c.gen_min_len = parse_u64(key, value);
    else if (key == "gen_max_len") c.gen_max_len = parse_u64(key, value);
    else if (key == "gen_tilt") c.gen_tilt = parse_double(key, value);
    else if (key == "gen_len_tilt") c.gen_len_tilt = parse_double(key, value);
    else if (key == "gen_valid_fraction") c.gen_valid_fraction = parse_double(key, value);
    else if (key == "sac_k") c.sac.k = parse_double(key, value);
    else if (key == "sac_b") c.sac.b = parse_double(key, value);
    else if (key == "sac_target") c.sac.target = parse_double(key, value);
    else if (key == "sac_max_steps") c.sac.max_steps = parse_u64(key, value);
    else if (key == "sac_horizon") c.sac.horizon = parse_u64(key, value);
    else if (key == "sac_lr") c.sac.lr = parse_double(key, value);
    else if (key == "sac_batch") c.sac.batch = parse_u64(key, value);
    else if (key == "sac_buffer") c.sac.buffer = parse_u64(key, value);
    else if (key == "sac_gamma") c.sac.gamma = parse_double(key, value);
    else if (key == "sac_tau") c.sac.tau = parse_double(key, value);
    else if (key == "sac_hidden") c.sac.hidden = parse_u64(key, value);
    else if (key == "sac_warmup") c.sac.warmup = parse_u64(key, value);
    else if (key == "sac_init_candidates") c.sac.init_candidates = parse_u64(key, value);
    else if (key == "sac_silhouette_sample") c.sac.silhouette_sample = parse_u64(key, value);
    else throw ConfigError("config: unknown key '" + key + "'");
}

inline void require_range(bool ok, const std::string& key, const std::string& constraint) {
    if (!ok) throw ConfigError("config: key '" + key + "' out of range (" + constraint + ")");
}

}  // namespace detail

inline void validate_config(const PipelineConfig& c) {
    using detail::require_range;
    require_range(c.hidden_dim >= 1, "hidden_dim", ">= 1");
    require_range(c.latent_dim >= 1, "latent_dim", ">= 1");
    require_range(c.embed_dim >= 1, "embed_dim", ">= 1");
    require_range(c.dropout >= 0.0 && c.dropout < 1.0, "dropout", "in [0, 1)");
    require_range(c.learning_rate > 0.0, "learning_rate", "> 0");
    require_range(c.epochs >= 1, "epochs", ">= 1");
    require_range(c.batch_size >= 1, "batch_size", ">= 1");
    require_range(c.n_filters >= 1, "n_filters", ">= 1");
    require_range(c.max_len >= 1, "max_len", ">= 1");
    require_range(c.latent_dim == c.hidden_dim, "latent_dim",
                  "must equal hidden_dim: the latent point seeds the decoder hidden state");
    require_range(c.enhancer_gain > 0.0, "enhancer_gain", "> 0");
    require_range(c.grad_clip >= 0.0, "grad_clip", ">= 0");
    require_range(c.gen_pairs >= 2, "gen_pairs", ">= 2");
    require_range(c.gen_mix > 0.0 && c.gen_mix < 1.0, "gen_mix", "in (0, 1)");
    require_range(c.gen_alphabet >= 4 && c.gen_alphabet % 2 == 0, "gen_alphabet", "even, >= 4");
    require_range(c.gen_min_len >= 1 && c.gen_min_len <= c.gen_max_len, "gen_min_len",
                  "1 <= gen_min_len <= gen_max_len");
    require_range(c.gen_max_len <= c.max_len, "gen_max_len", "<= max_len");
    require_range(c.gen_valid_fraction > 0.0 && c.gen_valid_fraction < 1.0, "gen_valid_fraction",
                  "in (0, 1)");
    require_range(c.gen_tilt >= 0.5 && c.gen_tilt < 1.0, "gen_tilt", "in [0.5, 1)");
    require_range(c.gen_len_tilt >= 0.0, "gen_len_tilt", ">= 0");
    require_range(c.sac.target >= -1.0 && c.sac.target <= 1.0, "sac_target", "in [-1, 1]");
    require_range(c.sac.horizon >= 1, "sac_horizon", ">= 1");
    require_range(c.sac.batch >= 1, "sac_batch", ">= 1");
    require_range(c.sac.buffer >= c.sac.batch, "sac_buffer", ">= sac_batch");
    require_range(c.sac.gamma >= 0.0 && c.sac.gamma < 1.0, "sac_gamma", "in [0, 1)");
    require_range(c.sac.tau > 0.0 && c.sac.tau <= 1.0, "sac_tau", "in (0, 1]");
    require_range(c.sac.hidden >= 1, "sac_hidden", ">= 1");
    require_range(c.sac.silhouette_sample >= 2, "sac_silhouette_sample", ">= 2");
    require_range(c.sac.init_candidates >= 1, "sac_init_candidates", ">= 1");
}

// Parses an optional config file and applies key=value overrides in order.
// Blank lines and lines starting with '#' are ignored.
inline PipelineConfig parse_config(const std::string& path,
                                   const std::vector<std::string>& overrides) {
    PipelineConfig c;
    if (!path.empty()) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("config: cannot open " + path);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty() || line[0] == '#') continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config: line " + std::to_string(line_no) + " of " + path +
                                  " is not key=value");
            detail::apply_key(c, line.substr(0, eq), line.substr(eq + 1));
        }
    }
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: override '" + o + "' is not key=value");
        detail::apply_key(c, o.substr(0, eq), o.substr(eq + 1));
    }
    validate_config(c);
    return c;
}

// Reconstructs a config from a checkpoint's embedded echo.
inline PipelineConfig config_from_echo(const std::string& echo) {
    PipelineConfig c;
    std::istringstream in(echo);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config echo: malformed line '" + line + "'");
        detail::apply_key(c, line.substr(0, eq), line.substr(eq + 1));
    }
    return c;
}

}  // namespace lms2s
