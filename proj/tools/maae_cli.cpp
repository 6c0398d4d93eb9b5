// Command-line surface for the MAAE toolkit: dataset synthesis, feature
// extraction, training, evaluation, heatmap emission, the ablation grid and
// the finite-difference gradient suite.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "maae/config.hpp"
#include "maae/dataset.hpp"
#include "maae/gradcheck_suite.hpp"
#include "maae/scoring.hpp"
#include "maae/trainer.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
};

maae::RunConfig build_config(const CommonArgs& args) {
    maae::RunConfig cfg;
    if (!args.config_path.empty()) cfg = maae::load_config_file(args.config_path);
    for (const auto& kv : args.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw maae::ConfigError("--set expects key=value, got '" + kv + "'");
        maae::config_set(cfg, maae::detail::trim(kv.substr(0, eq)),
                         maae::detail::trim(kv.substr(eq + 1)));
    }
    maae::validate_config(cfg);
    return cfg;
}

void add_common(CLI::App* sub, CommonArgs& args) {
    sub->add_option("--config", args.config_path, "flat key = value config file");
    sub->add_option("--set", args.overrides, "override a config key (key=value)")
        ->take_all();
}

int cmd_synth(const maae::RunConfig& cfg) {
    auto index = maae::generate_synthetic_dataset(cfg.synth_spec(), cfg.data_dir);
    std::size_t train = 0, test = 0;
    for (const auto& r : index.records)
        (r.split == maae::Split::train ? train : test) += 1;
    std::printf("synthesized %zu classes, %zu train / %zu test records under %s\n",
                index.class_names.size(), train, test, cfg.data_dir.c_str());
    return 0;
}

int cmd_extract(const maae::RunConfig& cfg) {
    auto index = maae::load_dataset_manifest(cfg.data_dir);
    maae::extract_features(cfg, index);
    std::printf("extracted %zu feature stacks into %s\n", index.records.size(),
                cfg.features_dir.c_str());
    return 0;
}

int cmd_train(const maae::RunConfig& cfg) {
    auto index = maae::load_dataset_manifest(cfg.data_dir);
    auto artifacts = maae::train(cfg, index);
    for (std::size_t i = 0; i < artifacts.checkpoints.size(); ++i)
        std::printf("trained %s -> %s\n", artifacts.model_names[i].c_str(),
                    artifacts.checkpoints[i].string().c_str());
    return 0;
}

int cmd_eval(const maae::RunConfig& cfg, const std::string& checkpoint) {
    auto index = maae::load_dataset_manifest(cfg.data_dir);
    auto report = maae::evaluate(cfg, index, nullptr,
                                 checkpoint.empty() ? fs::path{} : fs::path(checkpoint));
    std::fputs(report.to_text().c_str(), stdout);
    fs::create_directories(cfg.out_dir);
    std::ofstream out(fs::path(cfg.out_dir) / "report.tsv");
    out << report.to_text();
    return 0;
}

int cmd_heatmap(const maae::RunConfig& cfg, const std::string& out_dir) {
    auto index = maae::load_dataset_manifest(cfg.data_dir);
    maae::EvalArtifacts artifacts;
    maae::evaluate(cfg, index, &artifacts);
    const fs::path dir = out_dir.empty() ? fs::path(cfg.out_dir) / "heatmaps" : fs::path(out_dir);
    fs::create_directories(dir);
    for (const auto& map : artifacts.maps)
        maae::emit_heatmap(map, dir / ("heatmap_" + map.image_id + ".pgm"));
    std::printf("wrote %zu heatmaps to %s\n", artifacts.maps.size(), dir.string().c_str());
    return 0;
}

int cmd_ablate(const maae::RunConfig& cfg) {
    auto index = maae::load_dataset_manifest(cfg.data_dir);
    auto rows = maae::run_ablation_grid(cfg, index);
    std::printf("ANG\tFFM\tMAAE\timage_auroc\tpixel_auroc\n");
    for (const auto& row : rows)
        std::printf("%s\t%s\t%s\t%.6f\t%.6f\n", row.ang ? "x" : "-", row.ffm ? "x" : "-",
                    row.mixed ? "x" : "-", row.report.avg_image_auroc,
                    row.report.avg_pixel_auroc);
    return 0;
}

int cmd_gradcheck(int instances) {
    auto results = maae::run_gradient_suite(instances);
    bool all_passed = true;
    for (const auto& r : results) {
        std::printf("%-24s instances=%zu max_rel_err=%.3e tol=%.0e %s\n", r.op.c_str(),
                    r.instances, r.max_rel_err, r.tolerance, r.passed ? "PASS" : "FAIL");
        all_passed = all_passed && r.passed;
    }
    if (!all_passed) {
        std::fprintf(stderr, "gradient suite failed\n");
        return 2;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"unified mixed-attention auto encoder for multi-class anomaly detection"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string checkpoint;
    std::string heatmap_dir;
    int gradcheck_instances = 20;

    auto* synth = app.add_subcommand("synth", "generate the synthetic multi-class dataset");
    add_common(synth, args);
    auto* extract = app.add_subcommand("extract", "extract backbone features to MAAF files");
    add_common(extract, args);
    auto* train = app.add_subcommand("train", "train per the configured paradigm");
    add_common(train, args);
    auto* eval = app.add_subcommand("eval", "evaluate checkpoints and print the AUROC report");
    add_common(eval, args);
    eval->add_option("--checkpoint", checkpoint, "explicit checkpoint path (unified only)");
    auto* heatmap = app.add_subcommand("heatmap", "write PGM anomaly heatmaps for test images");
    add_common(heatmap, args);
    heatmap->add_option("--out", heatmap_dir, "output directory (default <out.dir>/heatmaps)");
    auto* ablate = app.add_subcommand("ablate", "run the six-row module ablation grid");
    add_common(ablate, args);
    auto* gradcheck = app.add_subcommand("gradcheck", "run the finite-difference gradient suite");
    gradcheck->add_option("--instances", gradcheck_instances, "random instances per op");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gradcheck->parsed()) return cmd_gradcheck(gradcheck_instances);
        const auto cfg = build_config(args);
        if (synth->parsed()) return cmd_synth(cfg);
        if (extract->parsed()) return cmd_extract(cfg);
        if (train->parsed()) return cmd_train(cfg);
        if (eval->parsed()) return cmd_eval(cfg, checkpoint);
        if (heatmap->parsed()) return cmd_heatmap(cfg, heatmap_dir);
        if (ablate->parsed()) return cmd_ablate(cfg);
    } catch (const maae::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;
}
