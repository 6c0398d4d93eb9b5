#pragma once

// Flat `key = value` run configuration. Unknown keys are rejected by name;
// every key has a paper-faithful default, and presets override for desk- or
// paper-scale runs.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <concepts>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include "maae/dataset.hpp"
#include "maae/errors.hpp"

namespace maae {

struct RunConfig {
    std::string paradigm = "unified"; // unified | separate
    std::string data_dir = "data";
    std::string features_dir;         // optional: ingest MAAF files instead of extracting
    std::string out_dir = "out";

    // synthetic dataset
    int synth_num_classes = 3;
    int synth_train_per_class = 20;
    int synth_normal_test_per_class = 10;
    int synth_anomaly_test_per_class = 10;
    std::uint64_t synth_seed = 1234;
    double synth_channel_jitter = 0.25;
    double synth_pixel_noise = 0.02;
    double synth_shift_jitter = 3.0;

    // model / training
    std::size_t image_size = 64;
    double lr = 1e-4;
    int batch_size = 64;
    int epochs = 20;
    double lambda_ang = 0.6;
    double lambda_re = 1.0;
    double ang_intensity = 0.5; // A
    int dilation = 4;
    int num_blocks = 18;
    int residual_period = 3; // M

    std::uint64_t seed_backbone = 101;
    std::uint64_t seed_ang = 202;
    std::uint64_t seed_init = 303;
    std::uint64_t seed_shuffle = 404;

    bool use_ang = true;
    bool use_ffm = true;
    bool use_mixed_attention = true;
    std::string recon_target = "noised"; // noised | clean

    SyntheticSpec synth_spec() const {
        SyntheticSpec s;
        s.num_classes = synth_num_classes;
        s.image_size = image_size;
        s.seed = synth_seed;
        s.train_per_class = synth_train_per_class;
        s.normal_test_per_class = synth_normal_test_per_class;
        s.anomaly_test_per_class = synth_anomaly_test_per_class;
        s.channel_jitter = synth_channel_jitter;
        s.pixel_noise = synth_pixel_noise;
        s.shift_jitter = synth_shift_jitter;
        return s;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

template <typename F>
void with_config_fields(RunConfig& cfg, F&& visit) {
    visit("paradigm", cfg.paradigm);
    visit("data.dir", cfg.data_dir);
    visit("features.dir", cfg.features_dir);
    visit("out.dir", cfg.out_dir);
    visit("synth.num_classes", cfg.synth_num_classes);
    visit("synth.train_per_class", cfg.synth_train_per_class);
    visit("synth.normal_test_per_class", cfg.synth_normal_test_per_class);
    visit("synth.anomaly_test_per_class", cfg.synth_anomaly_test_per_class);
    visit("synth.seed", cfg.synth_seed);
    visit("synth.channel_jitter", cfg.synth_channel_jitter);
    visit("synth.pixel_noise", cfg.synth_pixel_noise);
    visit("synth.shift_jitter", cfg.synth_shift_jitter);
    visit("image_size", cfg.image_size);
    visit("lr", cfg.lr);
    visit("batch_size", cfg.batch_size);
    visit("epochs", cfg.epochs);
    visit("ang.lambda_ang", cfg.lambda_ang);
    visit("ang.lambda_re", cfg.lambda_re);
    visit("ang.intensity", cfg.ang_intensity);
    visit("ang.seed", cfg.seed_ang);
    visit("dilation", cfg.dilation);
    visit("num_blocks", cfg.num_blocks);
    visit("residual_period", cfg.residual_period);
    visit("seed.backbone", cfg.seed_backbone);
    visit("seed.init", cfg.seed_init);
    visit("seed.shuffle", cfg.seed_shuffle);
    visit("use_ang", cfg.use_ang);
    visit("use_ffm", cfg.use_ffm);
    visit("use_mixed_attention", cfg.use_mixed_attention);
    visit("recon.target", cfg.recon_target);
}

inline void parse_into(const std::string& key, const std::string& value, std::string& field) {
    field = value;
}
inline void parse_into(const std::string& key, const std::string& value, double& field) {
    try {
        std::size_t pos = 0;
        field = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
    } catch (const std::exception&) {
        throw ConfigError("bad numeric value for key '" + key + "': " + value);
    }
}
inline void parse_into(const std::string& key, const std::string& value, int& field) {
    try {
        std::size_t pos = 0;
        field = std::stoi(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
    } catch (const std::exception&) {
        throw ConfigError("bad integer value for key '" + key + "': " + value);
    }
}
template <typename U>
    requires std::unsigned_integral<U> && (!std::same_as<U, bool>)
inline void parse_into(const std::string& key, const std::string& value, U& field) {
    try {
        std::size_t pos = 0;
        field = static_cast<U>(std::stoull(value, &pos));
        if (pos != value.size()) throw std::invalid_argument(value);
    } catch (const std::exception&) {
        throw ConfigError("bad unsigned value for key '" + key + "': " + value);
    }
}
inline void parse_into(const std::string& key, const std::string& value, bool& field) {
    if (value == "true" || value == "1") field = true;
    else if (value == "false" || value == "0") field = false;
    else throw ConfigError("bad boolean value for key '" + key + "': " + value);
}

} // namespace detail

/// Set one key; throws ConfigError naming the key when it is unknown.
inline void config_set(RunConfig& cfg, const std::string& key, const std::string& value) {
    bool found = false;
    detail::with_config_fields(cfg, [&](const char* name, auto& field) {
        if (key == name) {
            detail::parse_into(key, value, field);
            found = true;
        }
    });
    if (!found) throw ConfigError("unknown config key '" + key + "'");
}

inline void validate_config(const RunConfig& cfg) {
    if (cfg.paradigm != "unified" && cfg.paradigm != "separate")
        throw ConfigError("paradigm must be 'unified' or 'separate', got '" + cfg.paradigm + "'");
    if (cfg.recon_target != "noised" && cfg.recon_target != "clean")
        throw ConfigError("recon.target must be 'noised' or 'clean', got '" + cfg.recon_target + "'");
    if (cfg.image_size == 0 || cfg.image_size % 16 != 0)
        throw ConfigError("image_size must be a positive multiple of 16");
    if (cfg.lr <= 0) throw ConfigError("lr must be positive");
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (cfg.epochs < 0) throw ConfigError("epochs must be >= 0");
    if (cfg.lambda_ang < 0 || cfg.lambda_re < 0)
        throw ConfigError("ang.lambda_ang and ang.lambda_re must be >= 0");
    if (cfg.ang_intensity < 0) throw ConfigError("ang.intensity must be >= 0");
    if (cfg.dilation < 1) throw ConfigError("dilation must be >= 1");
    if (cfg.num_blocks < 0) throw ConfigError("num_blocks must be >= 0");
    if (cfg.residual_period < 1) throw ConfigError("residual_period must be >= 1");
    if (cfg.synth_num_classes < 1) throw ConfigError("synth.num_classes must be >= 1");
}

inline RunConfig load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    RunConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        config_set(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
    return cfg;
}

/// Canonical key=value dump, used for reproducibility digests.
inline std::string dump_config(const RunConfig& cfg) {
    std::ostringstream os;
    detail::with_config_fields(const_cast<RunConfig&>(cfg), [&](const char* name, auto& field) {
        os << name << " = " << field << '\n';
    });
    return os.str();
}

inline std::string config_digest(const RunConfig& cfg) {
    const auto text = dump_config(cfg);
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace maae
