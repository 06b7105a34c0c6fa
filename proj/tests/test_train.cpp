#include <gtest/gtest.h>

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "mlc/model.hpp"
#include "mlc/train.hpp"

namespace fs = std::filesystem;
using mlc::LabelVocabulary;
using mlc::Model;
using mlc::Tensor;
using mlc::TrainConfig;
using mlc::TrainInputs;

namespace {

fs::path tmp_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "mlc_train_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

TrainConfig smoke_config() {
    TrainConfig cfg;
    cfg.image_size = 16;
    cfg.stages = "4x2,8x2";
    cfg.head = "gap";
    cfg.batch_size = 4;
    cfg.epochs = 10;
    cfg.peak_lr = 3e-3;
    cfg.final_lr = 1e-5;
    cfg.warmup_iters = 4;
    cfg.augment = false;
    cfg.seed = 7;
    return cfg;
}

mlc::SyntheticSpec smoke_data_spec() {
    mlc::SyntheticSpec spec;
    spec.num_labels = 3;
    spec.train_count = 8;
    spec.test_count = 4;
    spec.image_size = 16;
    spec.min_glyphs = 1;
    spec.max_glyphs = 2;
    spec.seed = 11;
    return spec;
}

TrainInputs smoke_inputs(const mlc::SyntheticDataset& ds) {
    TrainInputs data;
    data.train = ds.train;
    data.test = ds.test;
    return data;
}

struct ExternalFixture {
    TrainConfig cfg;
    LabelVocabulary vocab;
    TrainInputs data;
};

ExternalFixture external_fixture(float fill = 0.0f, bool randomize = true) {
    ExternalFixture fx;
    fx.cfg.encoder = "external";
    fx.cfg.feature_dim = 3;
    fx.cfg.head = "gap";
    fx.cfg.batch_size = 2;
    fx.cfg.epochs = 2;
    fx.cfg.warmup_iters = 2;
    fx.cfg.peak_lr = 1e-3;
    fx.cfg.augment = false;
    fx.cfg.seed = 5;
    fx.vocab = LabelVocabulary::from_names({"a", "b"});

    auto make_split = [&](std::size_t n, std::uint64_t seed) {
        std::vector<mlc::LabeledExample> ex(n);
        mlc::Rng rng(seed);
        for (std::size_t i = 0; i < n; ++i) {
            ex[i].target = {static_cast<std::uint8_t>(i % 2),
                            static_cast<std::uint8_t>(1 - i % 2)};
            ex[i].source_id = "row_" + std::to_string(i);
        }
        std::vector<float> feats(n * 2 * 2 * 3, fill);
        if (randomize)
            for (float& v : feats) v = static_cast<float>(rng.uniform(-1.0, 1.0));
        return std::make_pair(ex, Tensor<float>::from_data({n, 2, 2, 3}, std::move(feats)));
    };
    auto [train, trainf] = make_split(4, 21);
    auto [test, testf] = make_split(2, 22);
    fx.data.train = std::move(train);
    fx.data.test = std::move(test);
    fx.data.external = true;
    fx.data.train_features = trainf;
    fx.data.test_features = testf;
    return fx;
}

}  // namespace

TEST(Train, SmokeRunLearnsAndLogs) {
    auto ds = mlc::generate_synthetic(smoke_data_spec());
    auto cfg = smoke_config();
    auto model = mlc::build_model<float>(cfg, ds.vocab.size());
    const auto dir = tmp_dir("smoke");
    auto result = mlc::train_model(model, cfg, ds.vocab, smoke_inputs(ds), dir.string());

    ASSERT_EQ(result.epochs.size(), 10u);
    EXPECT_EQ(result.total_iters, 20u);
    EXPECT_LT(result.epochs.back().mean_loss, result.epochs.front().mean_loss);
    EXPECT_GT(result.final_train_map, 0.0);
    EXPECT_LE(result.final_train_map, 1.0);
    EXPECT_GE(result.best_test_map, result.epochs.front().test_map);
    EXPECT_TRUE(fs::exists(result.best_path));
    EXPECT_TRUE(fs::exists(result.final_path));

    std::ifstream log(result.log_path);
    ASSERT_TRUE(log.good());
    std::string line;
    std::size_t lines = 0;
    while (std::getline(log, line)) {
        auto j = nlohmann::json::parse(line);
        EXPECT_EQ(j["epoch"].get<std::size_t>(), lines);
        EXPECT_TRUE(j["mean_loss"].is_number());
        EXPECT_TRUE(j["test_map"].is_number());
        EXPECT_TRUE(j["lr"].is_number());
        ++lines;
    }
    EXPECT_EQ(lines, 10u);
}

TEST(Train, RunsAreBitwiseDeterministic) {
    auto ds = mlc::generate_synthetic(smoke_data_spec());
    auto cfg = smoke_config();
    cfg.epochs = 4;
    cfg.augment = true;  // augmentation draws from a seeded stream

    const auto dir_a = tmp_dir("det_a");
    auto model_a = mlc::build_model<float>(cfg, ds.vocab.size());
    mlc::train_model(model_a, cfg, ds.vocab, smoke_inputs(ds), dir_a.string());

    const auto dir_b = tmp_dir("det_b");
    auto model_b = mlc::build_model<float>(cfg, ds.vocab.size());
    mlc::train_model(model_b, cfg, ds.vocab, smoke_inputs(ds), dir_b.string());

    EXPECT_EQ(file_bytes(dir_a / "best.ckpt"), file_bytes(dir_b / "best.ckpt"));
    EXPECT_EQ(file_bytes(dir_a / "final.ckpt"), file_bytes(dir_b / "final.ckpt"));
    EXPECT_EQ(file_bytes(dir_a / "train_log.jsonl"), file_bytes(dir_b / "train_log.jsonl"));
}

TEST(Train, ZeroEpochsSavesInitialState) {
    auto ds = mlc::generate_synthetic(smoke_data_spec());
    auto cfg = smoke_config();
    cfg.epochs = 0;
    auto model = mlc::build_model<float>(cfg, ds.vocab.size());
    const auto dir = tmp_dir("zero");
    auto result = mlc::train_model(model, cfg, ds.vocab, smoke_inputs(ds), dir.string());
    EXPECT_TRUE(result.epochs.empty());
    EXPECT_EQ(result.total_iters, 0u);
    EXPECT_TRUE(fs::exists(result.best_path));
    EXPECT_TRUE(fs::exists(result.final_path));
    EXPECT_DOUBLE_EQ(result.best_test_map, result.final_test_map);
    EXPECT_EQ(file_bytes(result.best_path), file_bytes(result.final_path));
}

TEST(Train, ExternalFeaturesHappyPath) {
    auto fx = external_fixture();
    auto model = mlc::build_model<float>(fx.cfg, fx.vocab.size());
    const auto dir = tmp_dir("external");
    auto result = mlc::train_model(model, fx.cfg, fx.vocab, fx.data, dir.string());
    EXPECT_EQ(result.epochs.size(), 2u);
    EXPECT_GT(result.final_test_map, 0.0);

    auto scores = mlc::collect_scores(model, fx.data, true, fx.cfg.batch_size);
    EXPECT_EQ(scores.size(), fx.data.test.size() * fx.vocab.size());
    for (double s : scores) {
        EXPECT_GE(s, 0.0);
        EXPECT_LE(s, 1.0);
    }
}

TEST(Train, NonFiniteLossRaisesDivergence) {
    auto fx = external_fixture(std::numeric_limits<float>::quiet_NaN(), false);
    auto model = mlc::build_model<float>(fx.cfg, fx.vocab.size());
    const auto dir = tmp_dir("diverge");
    EXPECT_THROW(mlc::train_model(model, fx.cfg, fx.vocab, fx.data, dir.string()),
                 mlc::Divergence);
}

TEST(Train, ValidatesInputsUpFront) {
    auto ds = mlc::generate_synthetic(smoke_data_spec());
    auto cfg = smoke_config();
    auto model = mlc::build_model<float>(cfg, ds.vocab.size());
    const auto dir = tmp_dir("validate");

    TrainInputs no_train;
    no_train.test = ds.test;
    EXPECT_THROW(mlc::train_model(model, cfg, ds.vocab, no_train, dir.string()),
                 mlc::EmptyDataset);

    TrainInputs no_test;
    no_test.train = ds.train;
    EXPECT_THROW(mlc::train_model(model, cfg, ds.vocab, no_test, dir.string()),
                 mlc::EmptyDataset);

    auto bad = smoke_inputs(ds);
    bad.train[0].target.pop_back();
    EXPECT_THROW(mlc::train_model(model, cfg, ds.vocab, bad, dir.string()),
                 mlc::ShapeMismatch);

    auto fx = external_fixture();
    auto ext_model = mlc::build_model<float>(fx.cfg, fx.vocab.size());
    auto missing = fx.data;
    missing.train_features = Tensor<float>();
    EXPECT_THROW(mlc::train_model(ext_model, fx.cfg, fx.vocab, missing, dir.string()),
                 mlc::InvalidSpec);

    auto short_batch = fx.data;
    short_batch.train_features = Tensor<float>::zeros({3, 2, 2, 3});
    EXPECT_THROW(mlc::train_model(ext_model, fx.cfg, fx.vocab, short_batch, dir.string()),
                 mlc::InvalidSpec);

    auto wrong_depth = fx.data;
    wrong_depth.train_features = Tensor<float>::zeros({4, 2, 2, 5});
    EXPECT_THROW(mlc::train_model(ext_model, fx.cfg, fx.vocab, wrong_depth, dir.string()),
                 mlc::InvalidSpec);
}

TEST(Train, CheckpointRestoresIdenticalPredictions) {
    auto ds = mlc::generate_synthetic(smoke_data_spec());
    auto cfg = smoke_config();
    cfg.epochs = 2;
    auto model = mlc::build_model<float>(cfg, ds.vocab.size());
    const auto dir = tmp_dir("restore");
    auto result = mlc::train_model(model, cfg, ds.vocab, smoke_inputs(ds), dir.string());

    auto restored = mlc::model_from_checkpoint<float>(result.final_path);
    EXPECT_EQ(restored.vocab.names(), ds.vocab.names());
    EXPECT_EQ(restored.config.echo(), cfg.echo());

    auto [batch, targets] = mlc::make_batch(ds.test, {0, 1, 2});
    auto a = model.forward_images(batch);
    auto b = restored.model.forward_images(batch);
    EXPECT_EQ(a.data(), b.data());
}

TEST(Train, LoadWeightsRejectsMismatchedShapes) {
    auto ds = mlc::generate_synthetic(smoke_data_spec());
    auto cfg = smoke_config();
    auto model = mlc::build_model<float>(cfg, ds.vocab.size());
    const auto dir = tmp_dir("mismatch");

    const auto path = (dir / "narrow.ckpt").string();
    mlc::save_model_checkpoint(path, model, cfg, ds.vocab);

    auto wide_cfg = cfg;
    wide_cfg.stages = "8x2,8x2";
    auto wide = mlc::build_model<float>(wide_cfg, ds.vocab.size());
    auto ck = mlc::load_checkpoint<float>(path);
    EXPECT_THROW(mlc::load_weights(wide, ck), mlc::CheckpointError);

    // a checkpoint that lacks one tensor cannot restore the model
    auto params = model.named_params();
    params.pop_back();
    const auto partial = (dir / "partial.ckpt").string();
    mlc::save_checkpoint(partial, cfg.echo(), ds.vocab.to_text(), params);
    auto ck2 = mlc::load_checkpoint<float>(partial);
    EXPECT_THROW(mlc::load_weights(model, ck2), mlc::CheckpointError);
}

TEST(Train, ConfigEchoRoundtrips) {
    auto cfg = smoke_config();
    const auto echoed = cfg.echo();
    auto back = TrainConfig::from_text(echoed);
    EXPECT_EQ(back.echo(), echoed);
    EXPECT_EQ(back.stages, cfg.stages);
    EXPECT_EQ(back.epochs, cfg.epochs);
    EXPECT_DOUBLE_EQ(back.peak_lr, cfg.peak_lr);
    EXPECT_EQ(back.augment, cfg.augment);
}

TEST(Train, EvaluateMapIsInUnitRange) {
    auto ds = mlc::generate_synthetic(smoke_data_spec());
    auto cfg = smoke_config();
    auto model = mlc::build_model<float>(cfg, ds.vocab.size());
    const double map = mlc::evaluate_map(model, smoke_inputs(ds), true, cfg);
    EXPECT_GT(map, 0.0);
    EXPECT_LE(map, 1.0);
}
