#include "maae/trainer.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace maae;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    auto p = fs::temp_directory_path() / ("maae_trainer_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::vector<std::uint8_t> slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// tiny desk setup: 2 classes, 32px images, 2 mixed blocks
RunConfig tiny_config(const fs::path& root) {
    RunConfig cfg;
    cfg.data_dir = (root / "data").string();
    cfg.out_dir = (root / "out").string();
    cfg.image_size = 32;
    cfg.synth_num_classes = 2;
    cfg.synth_train_per_class = 3;
    cfg.synth_normal_test_per_class = 2;
    cfg.synth_anomaly_test_per_class = 2;
    cfg.batch_size = 4;
    cfg.epochs = 2;
    cfg.num_blocks = 2;
    cfg.residual_period = 2;
    cfg.dilation = 1;
    cfg.lr = 1e-3;
    cfg.recon_target = "clean";
    return cfg;
}

DatasetIndex make_dataset(const RunConfig& cfg) {
    return generate_synthetic_dataset(cfg.synth_spec(), cfg.data_dir);
}

std::vector<std::vector<float>> snapshot(const NamedParams<float>& params) {
    std::vector<std::vector<float>> out;
    for (const auto& [name, p] : params)
        out.emplace_back(p.values().begin(), p.values().end());
    return out;
}

} // namespace

TEST(Trainer, ZeroEpochsCheckpointEqualsInitialization) {
    const auto root = temp_dir("zero_epochs");
    auto cfg = tiny_config(root);
    cfg.epochs = 0;
    auto index = make_dataset(cfg);
    auto artifacts = train(cfg, index);
    ASSERT_EQ(artifacts.checkpoints.size(), 1u);

    auto fresh = make_bundle<float>(cfg, kUnifiedTag);
    auto loaded = load_checkpoint(artifacts.checkpoints[0]);
    auto expect = fresh.named();
    ASSERT_EQ(loaded.size(), expect.size());
    for (std::size_t i = 0; i < loaded.size(); ++i) {
        EXPECT_EQ(loaded[i].first, expect[i].first);
        ASSERT_EQ(loaded[i].second.numel(), expect[i].second.numel());
        for (std::size_t j = 0; j < loaded[i].second.numel(); ++j)
            ASSERT_EQ(loaded[i].second.values()[j], expect[i].second.values()[j]);
    }
}

TEST(Trainer, DeterministicRuns) {
    const auto root = temp_dir("determinism");
    auto cfg = tiny_config(root);
    auto index = make_dataset(cfg);

    auto a = train(cfg, index);
    auto ck_a = slurp(a.checkpoints[0]);
    auto log_a = slurp(a.loss_logs[0]);

    auto b = train(cfg, index);
    EXPECT_EQ(ck_a, slurp(b.checkpoints[0]));
    EXPECT_EQ(log_a, slurp(b.loss_logs[0]));

    std::string header(log_a.begin(), log_a.begin() + 20);
    EXPECT_EQ(header.substr(0, 20), "step,L_e,L_ANG,norm_");
}

TEST(Trainer, TwoLossSeparationIsBitExact) {
    const auto root = temp_dir("separation");
    auto cfg = tiny_config(root);
    auto index = make_dataset(cfg);

    auto bundle = make_bundle<float>(cfg, kUnifiedTag);
    FeatureProvider<float> features(cfg);
    std::vector<std::size_t> batch;
    for (std::size_t i = 0; i < index.records.size(); ++i)
        if (index.records[i].split == Split::train) batch.push_back(i);

    auto model_group = bundle.model_group();
    std::vector<Tensor<float>> w_group{bundle.noise.weights};
    auto adam_model = make_adam_state(model_group);
    auto adam_w = make_adam_state(w_group);

    // model step with W detached: W must not move by a single bit
    const auto w_before = snapshot({{"w", bundle.noise.weights}});
    bundle.noise.weights.set_requires_grad(false);
    {
        Tape<float> tape;
        auto l_e = detail::batch_recon_loss(tape, bundle, features, index, batch, 1);
        tape.backward(l_e);
        adam_step(model_group, adam_model, 1e-3f);
        for (auto& p : model_group) p.zero_grad();
    }
    EXPECT_EQ(snapshot({{"w", bundle.noise.weights}}), w_before);

    // W step with the model detached: model params must not move
    const auto model_before = snapshot(bundle.named());
    bundle.set_model_requires_grad(false);
    bundle.noise.weights.set_requires_grad(true);
    bundle.noise.weights.zero_grad();
    {
        Tape<float> tape;
        auto l_e = detail::batch_recon_loss(tape, bundle, features, index, batch, 1);
        auto l_ang = ang_loss(tape, l_e, bundle.noise.weights, 0.6f, 1.0f);
        tape.backward(l_ang);
        adam_step(w_group, adam_w, 1e-3f);
    }
    auto after = snapshot(bundle.named());
    for (std::size_t i = 0; i + 1 < after.size(); ++i) // all but ang.W
        EXPECT_EQ(after[i], model_before[i]) << bundle.named()[i].first;
    EXPECT_NE(after.back(), model_before.back()); // W did move
}

TEST(Trainer, SeparateParadigmIsolatesClasses) {
    const auto root = temp_dir("separate");
    auto cfg = tiny_config(root);
    cfg.paradigm = "separate";
    auto index = make_dataset(cfg);

    auto arts = train(cfg, index);
    ASSERT_EQ(arts.checkpoints.size(), 2u);
    auto class0_a = slurp(arts.checkpoints[0]);
    auto class1_a = slurp(arts.checkpoints[1]);

    // swap the images of two class-1 train records; class-0 training must be
    // byte-identical, class-1 must change
    DatasetIndex tampered = index;
    std::vector<std::size_t> c1;
    for (std::size_t i = 0; i < tampered.records.size(); ++i)
        if (tampered.records[i].class_id == 1 && tampered.records[i].split == Split::train)
            c1.push_back(i);
    ASSERT_GE(c1.size(), 2u);
    std::swap(tampered.records[c1[0]].image_path, tampered.records[c1[1]].image_path);

    cfg.out_dir = (root / "out2").string();
    auto arts2 = train(cfg, tampered);
    EXPECT_EQ(slurp(arts2.checkpoints[0]), class0_a);
    EXPECT_NE(slurp(arts2.checkpoints[1]), class1_a);
}

TEST(Trainer, NonFiniteLossAbortsWithoutCheckpoint) {
    const auto root = temp_dir("nonfinite");
    auto cfg = tiny_config(root);
    cfg.lr = 1e14;
    cfg.epochs = 4;
    auto index = make_dataset(cfg);
    EXPECT_THROW(train(cfg, index), NonFiniteLoss);
    EXPECT_FALSE(fs::exists(fs::path(cfg.out_dir) / "maae_unified.maac"));
}

TEST(Trainer, LossDecreasesOnTinyRun) {
    const auto root = temp_dir("loss_drop");
    auto cfg = tiny_config(root);
    cfg.epochs = 6;
    auto index = make_dataset(cfg);
    auto arts = train(cfg, index);

    std::ifstream log(arts.loss_logs[0]);
    std::string line;
    std::getline(log, line); // header
    double first = -1, last = -1;
    while (std::getline(log, line)) {
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 + 1);
        const double l_e = std::stod(line.substr(c1 + 1, c2 - c1 - 1));
        if (first < 0) first = l_e;
        last = l_e;
    }
    ASSERT_GT(first, 0.0);
    EXPECT_LT(last, first);
}

TEST(Evaluate, IdentityModelScoresAreUninformative) {
    const auto root = temp_dir("identity_eval");
    auto cfg = tiny_config(root);
    cfg.num_blocks = 2;
    cfg.residual_period = 1; // identity survives when DC kernels are zero
    auto index = make_dataset(cfg);

    auto bundle = make_bundle<float>(cfg, kUnifiedTag);
    for (auto& blk : bundle.model.blocks) {
        std::fill(blk.dc_kernel.values_mut().begin(), blk.dc_kernel.values_mut().end(), 0.f);
        std::fill(blk.dc_bias.values_mut().begin(), blk.dc_bias.values_mut().end(), 0.f);
    }
    fs::create_directories(cfg.out_dir);
    save_checkpoint(bundle.named(), fs::path(cfg.out_dir) / "maae_unified.maac");

    auto report = evaluate(cfg, index);
    ASSERT_EQ(report.per_class.size(), 2u);
    for (const auto& c : report.per_class) {
        EXPECT_DOUBLE_EQ(c.image_auroc, 0.5);
        EXPECT_DOUBLE_EQ(c.pixel_auroc, 0.5);
    }
    EXPECT_NEAR(report.avg_image_auroc,
                (report.per_class[0].image_auroc + report.per_class[1].image_auroc) / 2.0, 1e-12);
}

TEST(Evaluate, CheckpointShapeMismatchIsRejected) {
    const auto root = temp_dir("ck_mismatch");
    auto cfg = tiny_config(root);
    cfg.epochs = 0;
    auto index = make_dataset(cfg);
    train(cfg, index);
    cfg.num_blocks = 3;
    EXPECT_THROW(evaluate(cfg, index), CheckpointMismatch);
}

TEST(Trainer, FeatureFileIngestionMatchesDirectExtraction) {
    const auto root = temp_dir("ingest");
    auto cfg = tiny_config(root);
    cfg.epochs = 1;
    auto index = make_dataset(cfg);

    auto direct = train(cfg, index);
    auto ck_direct = slurp(direct.checkpoints[0]);

    cfg.features_dir = (root / "features").string();
    extract_features(cfg, index);
    cfg.out_dir = (root / "out_ingest").string();
    auto ingested = train(cfg, index);
    EXPECT_EQ(slurp(ingested.checkpoints[0]), ck_direct);

    auto report_a = evaluate(cfg, index);
    cfg.features_dir.clear();
    cfg.out_dir = (root / "out_ingest").string();
    auto report_b = evaluate(cfg, index);
    EXPECT_EQ(report_a.avg_image_auroc, report_b.avg_image_auroc);
}

TEST(Trainer, EmptyDatasetRejected) {
    const auto root = temp_dir("empty");
    auto cfg = tiny_config(root);
    DatasetIndex index;
    index.class_names = {"only"};
    EXPECT_THROW(train(cfg, index), EmptyDataset);
}
