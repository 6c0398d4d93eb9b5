#pragma once

// Training and evaluation orchestration.
//
// Every step runs the two-loss alternating update: (1) reconstruction loss
// L_e updates the model and FFM parameters with W detached, then (2) L_ANG
// is recomputed with the model detached and updates only W. Inference never
// injects noise and scores residuals against the clean fused feature.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "maae/ang.hpp"
#include "maae/backbone.hpp"
#include "maae/config.hpp"
#include "maae/dataset.hpp"
#include "maae/ffm.hpp"
#include "maae/model.hpp"
#include "maae/optim.hpp"
#include "maae/scoring.hpp"

namespace maae {

inline constexpr std::uint64_t kUnifiedTag = 0xFFFFFFFFull;

template <typename T>
struct ModelBundle {
    FfmParams<T> ffm;   // undefined tensors when use_ffm is false
    MaaeParams<T> model;
    NoiseParams<T> noise;
    bool use_ffm = true;
    bool use_ang = true;
    bool recon_target_noised = true;
    std::size_t n_tokens = 0, channels = 0, grid_h = 0, grid_w = 0;

    NamedParams<T> named() const {
        NamedParams<T> out;
        if (use_ffm) {
            auto f = named_params(ffm);
            out.insert(out.end(), f.begin(), f.end());
        }
        auto m = named_params(model);
        out.insert(out.end(), m.begin(), m.end());
        out.emplace_back("ang.W", noise.weights);
        return out;
    }

    std::vector<Tensor<T>> model_group() const {
        std::vector<Tensor<T>> out;
        for (auto& [name, p] : named())
            if (name != "ang.W") out.push_back(p);
        return out;
    }

    void set_model_requires_grad(bool on) {
        for (auto& p : model_group()) p.set_requires_grad(on);
    }

    void set_all_requires_grad(bool on) {
        set_model_requires_grad(on);
        noise.weights.set_requires_grad(on);
    }
};

template <typename T>
ModelBundle<T> make_bundle(const RunConfig& cfg, std::uint64_t tag) {
    ModelBundle<T> b;
    b.use_ffm = cfg.use_ffm;
    b.use_ang = cfg.use_ang;
    b.recon_target_noised = cfg.recon_target == "noised";
    b.grid_h = cfg.image_size / 16;
    b.grid_w = cfg.image_size / 16;
    b.n_tokens = b.grid_h * b.grid_w;
    b.channels = 0;
    std::vector<std::size_t> plan;
    for (std::size_t c : kBackboneChannels) {
        plan.push_back(c);
        b.channels += c;
    }
    SplitMix64 init_rng(mix_seed(cfg.seed_init, tag));
    if (cfg.use_ffm) b.ffm = make_ffm_params<T>(plan, cfg.dilation, init_rng);
    b.model = make_maae_params<T>(static_cast<std::size_t>(cfg.num_blocks),
                                  static_cast<std::size_t>(cfg.residual_period), b.n_tokens,
                                  b.channels, b.grid_h, b.grid_w, cfg.dilation,
                                  cfg.use_mixed_attention, init_rng);
    // no-ANG ablation runs with zero intensity
    const T intensity = cfg.use_ang ? static_cast<T>(cfg.ang_intensity) : T{0};
    b.noise = make_noise_params<T>(b.n_tokens, b.channels, intensity,
                                   mix_seed(cfg.seed_ang, tag));
    return b;
}

/// Per-record feature access: loads MAAF files when features.dir is set,
/// otherwise runs the frozen toy backbone on the image. Results are cached.
template <typename T>
class FeatureProvider {
public:
    explicit FeatureProvider(const RunConfig& cfg) : cfg_(cfg) {}

    const FeatureStack<T>& get(const DatasetIndex& index, std::size_t record_idx) {
        auto it = cache_.find(record_idx);
        if (it != cache_.end()) return it->second;
        const auto& rec = index.records[record_idx];
        FeatureStack<T> stack;
        if (!cfg_.features_dir.empty()) {
            const auto path = std::filesystem::path(cfg_.features_dir) /
                              (std::filesystem::path(rec.image_path).stem().string() + ".maaf");
            auto loaded = load_feature_file(path);
            for (auto& st : loaded.stages) {
                std::vector<T> v(st.values().begin(), st.values().end());
                stack.stages.push_back(Tensor<T>::from(st.shape(), std::move(v)));
            }
            stack.image_id = loaded.image_id;
        } else {
            const auto img = read_ppm(rec.image_path);
            stack = toy_backbone_extract(image_to_tensor<T>(img), cfg_.seed_backbone);
            stack.image_id = std::filesystem::path(rec.image_path).stem().string();
        }
        stack.class_id = rec.class_id;
        validate_stack(stack);
        return cache_.emplace(record_idx, std::move(stack)).first->second;
    }

private:
    RunConfig cfg_;
    std::map<std::size_t, FeatureStack<T>> cache_;
};

namespace detail {

inline void shuffle_indices(std::vector<std::size_t>& v, SplitMix64& rng) {
    for (std::size_t i = v.size(); i > 1; --i)
        std::swap(v[i - 1], v[rng.next_u64() % i]);
}

template <typename T>
double weight_norm(const Tensor<T>& w) {
    double s = 0.0;
    for (T v : w.values()) s += static_cast<double>(v) * static_cast<double>(v);
    return std::sqrt(s);
}

} // namespace detail

struct TrainArtifacts {
    std::vector<std::string> model_names; // "unified" or per-class names
    std::vector<std::filesystem::path> checkpoints;
    std::vector<std::filesystem::path> loss_logs;
};

/// Run the frozen backbone over every record and materialize MAAF feature
/// files under features.dir. Training and evaluation ingest these when the
/// directory is configured.
inline void extract_features(const RunConfig& cfg, const DatasetIndex& index) {
    namespace fs = std::filesystem;
    if (cfg.features_dir.empty())
        throw ConfigError("features.dir must be set before extracting");
    std::error_code ec;
    fs::create_directories(cfg.features_dir, ec);
    for (const auto& rec : index.records) {
        const auto img = read_ppm(rec.image_path);
        auto stack = toy_backbone_extract(image_to_tensor<float>(img), cfg.seed_backbone);
        stack.image_id = fs::path(rec.image_path).stem().string();
        stack.class_id = rec.class_id;
        save_feature_file(stack, fs::path(cfg.features_dir) / (stack.image_id + ".maaf"));
    }
}

template <typename T>
FusedFeature<T> fuse_features(Tape<T>& tape, const ModelBundle<T>& bundle,
                              const FeatureStack<T>& stack) {
    return bundle.use_ffm ? ffm_fuse(tape, stack, bundle.ffm) : bilinear_fuse(tape, stack);
}

namespace detail {

template <typename T>
struct StepLosses {
    double l_e = 0.0;
    double l_ang = 0.0;
};

// Forward pass over one batch; returns the mean reconstruction loss tensor.
template <typename T>
Tensor<T> batch_recon_loss(Tape<T>& tape, ModelBundle<T>& bundle,
                           FeatureProvider<T>& features, const DatasetIndex& index,
                           const std::vector<std::size_t>& batch, std::uint64_t step) {
    Tensor<T> acc = Tensor<T>::scalar(T{0});
    for (std::size_t idx : batch) {
        auto fused = fuse_features(tape, bundle, features.get(index, idx));
        Tensor<T> x = fused.tokens;
        Tensor<T> x_star = x;
        if (bundle.use_ang) x_star = ang_sample(tape, bundle.noise, x, step, idx).x_star;
        auto y = maae_forward(tape, x_star, bundle.model);
        // the reconstruction target is data, not a trainable path
        auto target = (bundle.recon_target_noised ? x_star : x).detach();
        acc = add(tape, acc, recon_loss(tape, y, target, bundle.n_tokens));
    }
    return scale(tape, acc, T{1} / static_cast<T>(batch.size()));
}

template <typename T>
std::pair<std::filesystem::path, std::filesystem::path>
train_one_model(const RunConfig& cfg, const DatasetIndex& index,
                const std::vector<std::size_t>& train_records, const std::string& model_name,
                std::uint64_t tag) {
    namespace fs = std::filesystem;
    if (train_records.empty()) throw EmptyDataset("no training records for " + model_name);
    for (std::size_t idx : train_records)
        if (index.records[idx].label != Label::normal)
            throw LayoutError("anomalous record in the train split");

    auto bundle = make_bundle<T>(cfg, tag);
    FeatureProvider<T> features(cfg);

    auto model_group = bundle.model_group();
    std::vector<Tensor<T>> w_group{bundle.noise.weights};
    auto adam_model = make_adam_state(model_group);
    auto adam_w = make_adam_state(w_group);
    const T lr = static_cast<T>(cfg.lr);

    std::string log_text = "step,L_e,L_ANG,norm_W\n";
    char line[160];
    std::uint64_t step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto order = train_records;
        SplitMix64 shuffle_rng(mix_seed(mix_seed(cfg.seed_shuffle, tag),
                                        static_cast<std::uint64_t>(epoch)));
        shuffle_indices(order, shuffle_rng);

        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            ++step;
            std::vector<std::size_t> batch(
                order.begin() + static_cast<std::ptrdiff_t>(start),
                order.begin() + static_cast<std::ptrdiff_t>(
                                    std::min(start + cfg.batch_size, order.size())));

            // (1) reconstruction step: W detached
            bundle.noise.weights.set_requires_grad(false);
            bundle.set_model_requires_grad(true);
            double l_e_value = 0.0;
            {
                Tape<T> tape;
                auto l_e = batch_recon_loss(tape, bundle, features, index, batch, step);
                l_e_value = static_cast<double>(l_e.item());
                if (!std::isfinite(l_e_value))
                    throw NonFiniteLoss("L_e non-finite at step " + std::to_string(step));
                tape.backward(l_e);
                adam_step(model_group, adam_model, lr);
                for (auto& p : model_group) p.zero_grad();
            }

            // (2) adversarial step: model detached, only W moves
            double l_ang_value;
            if (bundle.use_ang) {
                bundle.set_model_requires_grad(false);
                bundle.noise.weights.set_requires_grad(true);
                bundle.noise.weights.zero_grad();
                Tape<T> tape;
                auto l_e = batch_recon_loss(tape, bundle, features, index, batch, step);
                auto l_ang = ang_loss(tape, l_e, bundle.noise.weights,
                                      static_cast<T>(cfg.lambda_ang),
                                      static_cast<T>(cfg.lambda_re));
                l_ang_value = static_cast<double>(l_ang.item());
                if (!std::isfinite(l_ang_value))
                    throw NonFiniteLoss("L_ANG non-finite at step " + std::to_string(step));
                tape.backward(l_ang);
                adam_step(w_group, adam_w, lr);
                bundle.noise.weights.zero_grad();
                bundle.set_model_requires_grad(true);
            } else {
                l_ang_value = -cfg.lambda_ang * l_e_value +
                              cfg.lambda_re * weight_norm(bundle.noise.weights);
            }

            std::snprintf(line, sizeof line, "%" PRIu64 ",%.9g,%.9g,%.9g\n", step, l_e_value,
                          l_ang_value, weight_norm(bundle.noise.weights));
            log_text += line;
        }
    }

    fs::create_directories(cfg.out_dir);
    const auto ck_path = fs::path(cfg.out_dir) / ("maae_" + model_name + ".maac");
    save_checkpoint(bundle.named(), ck_path);
    const auto log_path = fs::path(cfg.out_dir) / ("loss_" + model_name + ".csv");
    std::ofstream log(log_path);
    if (!log) throw IoError("cannot write loss log: " + log_path.string());
    log << log_text;
    return {ck_path, log_path};
}

} // namespace detail

/// Train per the configured paradigm: one model over all classes (unified)
/// or one independent model per class (separate).
template <typename T = float>
TrainArtifacts train(const RunConfig& cfg, const DatasetIndex& index) {
    validate_config(cfg);
    TrainArtifacts out;
    if (cfg.paradigm == "unified") {
        std::vector<std::size_t> records;
        for (std::size_t i = 0; i < index.records.size(); ++i)
            if (index.records[i].split == Split::train) records.push_back(i);
        auto [ck, log] = detail::train_one_model<T>(cfg, index, records, "unified", kUnifiedTag);
        out.model_names.push_back("unified");
        out.checkpoints.push_back(ck);
        out.loss_logs.push_back(log);
    } else {
        for (std::size_t cls = 0; cls < index.class_names.size(); ++cls) {
            std::vector<std::size_t> records;
            for (std::size_t i = 0; i < index.records.size(); ++i)
                if (index.records[i].split == Split::train &&
                    index.records[i].class_id == static_cast<int>(cls))
                    records.push_back(i);
            auto [ck, log] = detail::train_one_model<T>(cfg, index, records,
                                                        index.class_names[cls], cls);
            out.model_names.push_back(index.class_names[cls]);
            out.checkpoints.push_back(ck);
            out.loss_logs.push_back(log);
        }
    }
    return out;
}

struct EvalArtifacts {
    std::vector<DatasetRecord> records; // test records, eval order
    std::vector<AnomalyMap> maps;
};

namespace detail {

template <typename T>
ModelBundle<T> load_bundle(const RunConfig& cfg, std::uint64_t tag,
                           const std::filesystem::path& checkpoint) {
    auto bundle = make_bundle<T>(cfg, tag);
    bundle.set_all_requires_grad(false);
    auto params = bundle.named();
    apply_checkpoint(load_checkpoint(checkpoint), params);
    return bundle;
}

} // namespace detail

/// Evaluate trained checkpoints on the test split: image AUROC from the map
/// maximum, pixel AUROC from pooled per-pixel scores, per class plus
/// arithmetic averages. No noise, no parameter updates.
template <typename T = float>
EvalReport evaluate(const RunConfig& cfg, const DatasetIndex& index,
                    EvalArtifacts* artifacts = nullptr,
                    const std::filesystem::path& checkpoint_override = {}) {
    namespace fs = std::filesystem;
    validate_config(cfg);
    FeatureProvider<T> features(cfg);
    EvalReport report;
    report.config_digest = config_digest(cfg);

    ModelBundle<T> unified_bundle;
    const bool unified = cfg.paradigm == "unified";
    if (unified) {
        const auto ck = checkpoint_override.empty()
                            ? fs::path(cfg.out_dir) / "maae_unified.maac"
                            : checkpoint_override;
        unified_bundle = detail::load_bundle<T>(cfg, kUnifiedTag, ck);
    } else if (!checkpoint_override.empty()) {
        throw ConfigError("checkpoint override is only valid for the unified paradigm");
    }

    for (std::size_t cls = 0; cls < index.class_names.size(); ++cls) {
        ModelBundle<T> class_bundle;
        if (!unified)
            class_bundle = detail::load_bundle<T>(
                cfg, cls, fs::path(cfg.out_dir) / ("maae_" + index.class_names[cls] + ".maac"));
        ModelBundle<T>& bundle = unified ? unified_bundle : class_bundle;

        std::vector<double> scores;
        std::vector<int> labels;
        std::vector<AnomalyMap> maps;
        std::vector<ByteGrid> masks;
        for (std::size_t i = 0; i < index.records.size(); ++i) {
            const auto& rec = index.records[i];
            if (rec.split != Split::test || rec.class_id != static_cast<int>(cls)) continue;
            Tape<T> tape;
            auto fused = fuse_features(tape, bundle, features.get(index, i));
            auto y = maae_forward(tape, fused.tokens, bundle.model);
            auto map = anomaly_map(y, fused.tokens, bundle.grid_h, bundle.grid_w,
                                   cfg.image_size, cfg.image_size);
            map.image_id = fs::path(rec.image_path).stem().string();
            scores.push_back(static_cast<double>(anomaly_score(map)));
            labels.push_back(rec.label == Label::anomalous ? 1 : 0);
            if (rec.label == Label::anomalous) {
                if (rec.mask_path.empty())
                    throw MissingMask("pixel evaluation needs a mask for " + rec.image_path);
                auto mask = read_pgm(rec.mask_path);
                if (mask.height != cfg.image_size || mask.width != cfg.image_size)
                    throw ShapeMismatch("mask resolution differs from image_size for " +
                                        rec.mask_path);
                masks.push_back(std::move(mask));
            } else {
                masks.push_back(ByteGrid{cfg.image_size, cfg.image_size,
                                         std::vector<std::uint8_t>(cfg.image_size * cfg.image_size, 0)});
            }
            if (artifacts) {
                artifacts->records.push_back(rec);
                artifacts->maps.push_back(map);
            }
            maps.push_back(std::move(map));
        }
        if (maps.empty()) continue;
        ClassResult cr;
        cr.class_name = index.class_names[cls];
        cr.test_images = maps.size();
        cr.image_auroc = auroc(scores, labels);
        cr.pixel_auroc = pixel_auroc(maps, masks);
        report.per_class.push_back(cr);
    }
    report.finalize();
    return report;
}

// ---------------------------------------------------------------------------
// ablation grid
// ---------------------------------------------------------------------------

struct AblationRow {
    bool ang = false, ffm = false, mixed = false;
    EvalReport report;
};

/// The six-row module grid: every row trains from scratch with the flags
/// applied and evaluates on the same dataset.
template <typename T = float>
std::vector<AblationRow> run_ablation_grid(const RunConfig& base, const DatasetIndex& index) {
    static constexpr bool kGrid[6][3] = {
        {false, false, false}, {false, false, true},  {true, false, false},
        {true, true, false},   {true, false, true},   {true, true, true},
    };
    std::vector<AblationRow> rows;
    for (int r = 0; r < 6; ++r) {
        RunConfig cfg = base;
        cfg.use_ang = kGrid[r][0];
        cfg.use_ffm = kGrid[r][1];
        cfg.use_mixed_attention = kGrid[r][2];
        cfg.out_dir = (std::filesystem::path(base.out_dir) / ("ablate_row" + std::to_string(r)))
                          .string();
        train<T>(cfg, index);
        AblationRow row;
        row.ang = cfg.use_ang;
        row.ffm = cfg.use_ffm;
        row.mixed = cfg.use_mixed_attention;
        row.report = evaluate<T>(cfg, index);
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace maae
