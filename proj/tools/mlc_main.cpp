#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "mlc/mlc.hpp"

// Command-line front end. Exit codes:
//   0 success          2 configuration error     3 data/format error
//   4 training diverged  5 checkpoint error      6 gradient check failure
//   1 any other failure

namespace {

constexpr int kExitOk = 0;
constexpr int kExitOther = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDivergence = 4;
constexpr int kExitCheckpoint = 5;
constexpr int kExitGradcheck = 6;

struct CommonTrainArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string data_dir;
    std::string manifest;
    std::string vocab;
    std::string out_dir;
    std::string train_features;
    std::string test_features;
};

mlc::TrainConfig resolve_config(const std::string& config_path,
                                const std::vector<std::string>& overrides) {
    mlc::TrainConfig cfg;
    if (!config_path.empty()) cfg = mlc::TrainConfig::from_file(config_path);
    for (const auto& kv : overrides) {
        const std::size_t eq = kv.find('=');
        if (eq == std::string::npos)
            throw mlc::ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.apply(kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

std::string default_under(const std::string& dir, const char* name,
                          const std::string& explicit_path) {
    if (!explicit_path.empty()) return explicit_path;
    return (std::filesystem::path(dir) / name).string();
}

mlc::TrainInputs load_inputs(const mlc::TrainConfig& cfg, const mlc::LabelVocabulary& vocab,
                             const CommonTrainArgs& args) {
    mlc::TrainInputs inputs;
    const std::string manifest = default_under(args.data_dir, "manifest.csv", args.manifest);
    if (cfg.encoder == "external") {
        inputs.external = true;
        inputs.train = mlc::load_manifest_labels_only(manifest, vocab, "train");
        inputs.test = mlc::load_manifest_labels_only(manifest, vocab, "test");
        if (args.train_features.empty() || args.test_features.empty())
            throw mlc::ConfigError(
                "external encoder requires --train-features and --test-features");
        inputs.train_features = mlc::read_fmap_file(args.train_features);
        inputs.test_features = mlc::read_fmap_file(args.test_features);
    } else {
        inputs.train = mlc::load_manifest(manifest, args.data_dir, vocab, "train",
                                          cfg.image_size);
        inputs.test = mlc::load_manifest(manifest, args.data_dir, vocab, "test",
                                         cfg.image_size);
    }
    return inputs;
}

int cmd_train(const CommonTrainArgs& args) {
    mlc::TrainConfig cfg = resolve_config(args.config_path, args.overrides);
    const mlc::LabelVocabulary vocab =
        mlc::LabelVocabulary::load(default_under(args.data_dir, "vocab.txt", args.vocab));
    if (vocab.size() == 0) throw mlc::DataError("vocabulary is empty");
    mlc::TrainInputs inputs = load_inputs(cfg, vocab, args);

    mlc::Model<float> model = mlc::build_model<float>(cfg, vocab.size());
    const mlc::TrainResult result =
        mlc::train_model(model, cfg, vocab, inputs, args.out_dir);

    std::cout << "trained " << result.total_iters << " iterations over " << cfg.epochs
              << " epochs\n"
              << "final train mAP " << result.final_train_map << ", final test mAP "
              << result.final_test_map << ", best test mAP " << result.best_test_map << "\n"
              << "checkpoints: " << result.best_path << " (best), " << result.final_path
              << " (final)\n"
              << "log: " << result.log_path << "\n";
    return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const CommonTrainArgs& args,
             const std::string& split, const std::string& features_path,
             const std::string& out_path) {
    mlc::RestoredModel<float> restored = mlc::model_from_checkpoint<float>(checkpoint);
    const mlc::TrainConfig& cfg = restored.config;
    const mlc::LabelVocabulary& vocab = restored.vocab;
    const std::string manifest = default_under(args.data_dir, "manifest.csv", args.manifest);

    mlc::TrainInputs inputs;  // evaluated split loaded as `test`
    std::size_t feat_h = 0, feat_w = 0;
    if (cfg.encoder == "external") {
        inputs.external = true;
        inputs.test = mlc::load_manifest_labels_only(manifest, vocab, split);
        if (features_path.empty())
            throw mlc::ConfigError("external encoder requires --features");
        inputs.test_features = mlc::read_fmap_file(features_path);
        if (inputs.test_features.shape()[0] != inputs.test.size())
            throw mlc::InvalidSpec("feature map batch does not match manifest rows");
        if (inputs.test_features.shape()[3] != cfg.feature_dim)
            throw mlc::InvalidSpec("feature depth does not match checkpoint feature_dim");
        feat_h = inputs.test_features.shape()[1];
        feat_w = inputs.test_features.shape()[2];
    } else {
        inputs.test = mlc::load_manifest(manifest, args.data_dir, vocab, split,
                                         cfg.image_size);
    }

    const auto scores = mlc::collect_scores(restored.model, inputs, true, cfg.batch_size);
    const auto targets = mlc::flat_targets<float>(inputs.test);
    const auto grid = mlc::ThresholdGrid::uniform(cfg.threshold_count);

    mlc::EvalReport report;
    report.split = split;
    report.map_mode = cfg.map_mode;
    report.map = mlc::mean_average_precision(scores, targets, vocab.size(),
                                             cfg.parsed_map_mode(), grid);
    report.num_images = inputs.test.size();
    report.num_labels = vocab.size();
    const auto per_label = mlc::per_label_average_precision(scores, targets, vocab.size(), grid);
    for (std::size_t k = 0; k < vocab.size(); ++k)
        report.per_label.emplace_back(vocab.name(k), per_label[k]);
    report.total_params = restored.model.param_count();
    report.head_params = restored.model.head_param_count();
    report.flops_per_image =
        cfg.encoder == "external"
            ? restored.model.flops_per_feature_map(feat_h, feat_w)
            : restored.model.flops_per_image(cfg.image_size, cfg.image_size);
    report.created_at = mlc::iso8601_utc_now();

    if (!out_path.empty()) {
        mlc::write_report(out_path, report);
        std::cout << "report written to " << out_path << "\n";
    } else {
        std::cout << report.to_json().dump(2) << "\n";
    }
    std::cout << "split " << split << " mAP (" << cfg.map_mode << ") = " << report.map << "\n";
    return kExitOk;
}

int cmd_predict(const std::string& checkpoint, const std::vector<std::string>& images,
                const std::string& fmap_path, const std::string& out_path) {
    mlc::RestoredModel<float> restored = mlc::model_from_checkpoint<float>(checkpoint);
    const mlc::TrainConfig& cfg = restored.config;

    std::vector<std::string> ids;
    mlc::Tensor<float> batch;
    if (cfg.encoder == "external") {
        if (fmap_path.empty())
            throw mlc::ConfigError("external encoder requires --features");
        batch = mlc::read_fmap_file(fmap_path);
        if (batch.shape()[3] != cfg.feature_dim)
            throw mlc::InvalidSpec("feature depth does not match checkpoint feature_dim");
        for (std::size_t i = 0; i < batch.shape()[0]; ++i)
            ids.push_back("record_" + std::to_string(i));
    } else {
        if (images.empty()) throw mlc::ConfigError("predict needs at least one image path");
        std::vector<float> data;
        for (const auto& path : images) {
            mlc::Tensor<float> img = mlc::read_png(path);
            img = mlc::bilinear_resize(img, cfg.image_size, cfg.image_size);
            data.insert(data.end(), img.data().begin(), img.data().end());
            ids.push_back(path);
        }
        batch = mlc::Tensor<float>::from_data(
            {images.size(), cfg.image_size, cfg.image_size, 3}, std::move(data));
    }

    mlc::NoGradGuard ng;
    mlc::Tensor<float> logits = cfg.encoder == "external"
                                    ? restored.model.forward_features(batch)
                                    : restored.model.forward_images(batch);
    mlc::Tensor<float> probs = mlc::sigmoid(logits);

    const std::size_t K = restored.vocab.size();
    nlohmann::json out = nlohmann::json::array();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        std::vector<std::size_t> order(K);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return probs.data()[i * K + a] > probs.data()[i * K + b];
        });
        nlohmann::json scores = nlohmann::json::array();
        for (std::size_t k : order)
            scores.push_back({{"label", restored.vocab.name(k)},
                              {"score", probs.data()[i * K + k]}});
        out.push_back({{"input", ids[i]}, {"scores", scores}});
    }
    if (!out_path.empty()) {
        std::ofstream os(out_path, std::ios::trunc);
        if (!os) throw mlc::DataError("cannot write predictions: " + out_path);
        os << out.dump(2) << "\n";
        std::cout << "predictions written to " << out_path << "\n";
    } else {
        std::cout << out.dump(2) << "\n";
    }
    return kExitOk;
}

// One gradient-check target: leaf inputs plus a closure that rebuilds the
// scalar graph from their current values.
struct GradFixture {
    std::vector<mlc::TensorD> inputs;
    std::function<mlc::TensorD()> f;
};

mlc::AsymmetricLossConfig gradcheck_loss_config() {
    mlc::AsymmetricLossConfig lc;
    lc.gamma_pos = 2.0;
    lc.gamma_neg = 3.0;
    lc.reduction = mlc::Reduction::mean;
    return lc;
}

std::vector<std::uint8_t> random_targets(std::size_t count, mlc::Rng& rng) {
    std::vector<std::uint8_t> y(count);
    for (auto& t : y) t = rng.bernoulli(0.5) ? 1 : 0;
    return y;
}

// The relative-error metric compares each coordinate against a 1e-12 floor,
// so a coordinate whose true gradient is below the central-difference noise
// reads as pure noise regardless of implementation correctness. A fixture
// is only usable when every checked coordinate clears that region.
bool clear_of_noise_floor(GradFixture& fx) {
    for (auto& t : fx.inputs) t.zero_grad();
    mlc::TensorD out = fx.f();
    mlc::backward(out);
    for (auto& t : fx.inputs) {
        if (!t.requires_grad()) continue;
        if (t.grad().empty()) return false;
        for (double g : t.grad())
            if (std::abs(g) < 2e-6) return false;
    }
    return true;
}

GradFixture loss_fixture(std::uint64_t u) {
    mlc::Rng rng(mlc::mix_seed(u, 0x6c6f7373ULL));
    std::vector<double> z(2 * 5);
    for (double& v : z) {
        const double m = rng.uniform(0.5, 2.5);
        v = rng.bernoulli(0.5) ? m : -m;
    }
    const auto y = random_targets(z.size(), rng);
    GradFixture fx;
    fx.inputs = {mlc::TensorD::from_data({2, 5}, std::move(z), true)};
    mlc::TensorD logits = fx.inputs[0];
    fx.f = [logits, y] { return mlc::asymmetric_loss(logits, y, gradcheck_loss_config()); };
    return fx;
}

GradFixture encoder_fixture(std::uint64_t u) {
    mlc::TinyEncoderConfig ec;
    ec.stages = {{4, 2}, {8, 2}};
    mlc::TinyEncoder<double> enc(ec, mlc::mix_seed(u, 0x74656e63ULL));

    mlc::Rng rng(mlc::mix_seed(u, 0x696d6773ULL));
    std::vector<double> pixels(2 * 8 * 8 * 3);
    for (double& v : pixels) v = rng.uniform(0.1, 1.0);

    std::vector<double> w(2 * 2 * 2 * 8);
    for (double& v : w) {
        const double m = rng.uniform(0.3, 1.0);
        v = rng.bernoulli(0.5) ? m : -m;
    }
    mlc::TensorD weight = mlc::TensorD::from_data({2, 2, 2, 8}, std::move(w));

    GradFixture fx;
    fx.inputs = {mlc::TensorD::from_data({2, 8, 8, 3}, std::move(pixels), true)};
    for (auto& [name, p] : enc.named_params()) fx.inputs.push_back(p);
    mlc::TensorD images = fx.inputs[0];
    fx.f = [enc, images, weight] {
        return mlc::sum_axes(mlc::mul(enc.forward(images), weight), {0, 1, 2, 3});
    };
    return fx;
}

GradFixture gap_fixture(std::uint64_t u) {
    mlc::GapDecoder<double> head(8, 5, mlc::mix_seed(u, 0x67687764ULL));
    mlc::Rng rng(mlc::mix_seed(u, 0x67666561ULL));
    std::vector<double> feats(4 * 2 * 2 * 8);
    for (double& v : feats) v = rng.uniform(0.2, 1.0);
    const auto y = random_targets(4 * 5, rng);

    GradFixture fx;
    fx.inputs = {mlc::TensorD::from_data({4, 2, 2, 8}, std::move(feats), true)};
    for (auto& [name, p] : head.named_params()) fx.inputs.push_back(p);
    mlc::TensorD features = fx.inputs[0];
    fx.f = [head, features, y] {
        return mlc::asymmetric_loss(head.forward(features), y, gradcheck_loss_config());
    };
    return fx;
}

GradFixture mldecoder_fixture(std::uint64_t u) {
    mlc::MlDecoderConfig mc;
    mc.feature_dim = 8;
    mc.num_labels = 5;
    mc.groups = 2;
    mc.embed_dim = 8;
    mc.ffn_dim = 16;
    mlc::MlDecoder<double> head(mc, mlc::mix_seed(u, 0x6d687764ULL));

    mlc::Rng rng(mlc::mix_seed(u, 0x6d666561ULL));
    std::vector<double> feats(4 * 2 * 2 * 8);
    for (double& v : feats) {
        const double m = rng.uniform(0.2, 1.0);
        v = rng.bernoulli(0.5) ? m : -m;
    }
    const auto y = random_targets(4 * 5, rng);

    GradFixture fx;
    fx.inputs = {mlc::TensorD::from_data({4, 2, 2, 8}, std::move(feats), true)};
    // the key-projection bias shifts every attention logit in a group by the
    // same amount, so softmax makes its gradient identically zero; a zero
    // coordinate cannot be judged by the relative-error metric and is covered
    // by its own invariance test instead
    for (auto& [name, p] : head.named_params())
        if (name.find("key_proj.bias") == std::string::npos) fx.inputs.push_back(p);
    mlc::TensorD features = fx.inputs[0];
    fx.f = [head, features, y] {
        return mlc::asymmetric_loss(head.forward(features), y, gradcheck_loss_config());
    };
    return fx;
}

int cmd_gradcheck(std::size_t seeds, const std::string& corrupt_op, double tolerance,
                  const std::string& head_choice) {
    const auto t0 = std::chrono::steady_clock::now();
    if (!corrupt_op.empty()) {
        mlc::grad_corruption().active = true;
        mlc::grad_corruption().op = mlc::op_kind_from_name(corrupt_op);
    }
    const bool want_gap = head_choice == "gap" || head_choice == "both";
    const bool want_mld = head_choice == "mldecoder" || head_choice == "both";
    constexpr std::size_t kAttempts = 8;
    constexpr double kStep = 1e-5;

    bool ok_shared = true, ok_gap = true, ok_mld = true;
    auto run_piece = [&](const char* piece, bool& ok_flag, std::uint64_t seed,
                         const std::function<GradFixture(std::uint64_t)>& build) {
        mlc::GradCheckResult last;
        bool checked = false;
        for (std::size_t attempt = 0; attempt < kAttempts; ++attempt) {
            GradFixture fx = build(mlc::mix_seed(mlc::mix_seed(seed, 0x67636669ULL), attempt));
            if (!clear_of_noise_floor(fx)) continue;
            last = mlc::finite_difference_check(fx.inputs, fx.f, kStep, tolerance);
            checked = true;
            if (last.ok) return;
        }
        if (!checked) {
            GradFixture fx = build(mlc::mix_seed(mlc::mix_seed(seed, 0x67636669ULL), 0));
            last = mlc::finite_difference_check(fx.inputs, fx.f, kStep, tolerance);
            if (last.ok) return;
        }
        ok_flag = false;
        std::cout << "[FAIL] piece=" << piece << " seed=" << seed
                  << " max_rel_err=" << last.max_rel_err << " analytic=" << last.analytic
                  << " numeric=" << last.numeric;
        if (!corrupt_op.empty()) std::cout << " corrupted_op=" << corrupt_op;
        std::cout << "\n";
    };

    for (std::size_t seed = 0; seed < seeds; ++seed) {
        run_piece("loss", ok_shared, seed, loss_fixture);
        run_piece("encoder", ok_shared, seed, encoder_fixture);
        if (want_gap) run_piece("gap", ok_gap, seed, gap_fixture);
        if (want_mld) run_piece("mldecoder", ok_mld, seed, mldecoder_fixture);
    }
    if (want_gap && ok_shared && ok_gap)
        std::cout << "[OK] head=gap " << seeds << " seeds within tolerance " << tolerance
                  << "\n";
    if (want_mld && ok_shared && ok_mld)
        std::cout << "[OK] head=mldecoder " << seeds << " seeds within tolerance "
                  << tolerance << "\n";
    mlc::grad_corruption().active = false;

    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "gradcheck finished in " << secs << "s\n";
    const bool all_ok = ok_shared && (!want_gap || ok_gap) && (!want_mld || ok_mld);
    return all_ok ? kExitOk : kExitGradcheck;
}

int cmd_synth(const std::string& out_dir, std::size_t labels, std::size_t train_count,
              std::size_t test_count, std::size_t size, std::size_t min_glyphs,
              std::size_t max_glyphs, std::uint64_t seed) {
    mlc::SyntheticSpec spec;
    spec.num_labels = labels;
    spec.train_count = train_count;
    spec.test_count = test_count;
    spec.image_size = size;
    spec.min_glyphs = min_glyphs;
    spec.max_glyphs = max_glyphs;
    spec.seed = seed;
    const mlc::SyntheticDataset ds = mlc::write_synthetic_dataset(spec, out_dir);
    std::cout << "wrote " << ds.train.size() << " train and " << ds.test.size()
              << " test images (" << ds.vocab.size() << " labels) under " << out_dir << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-label image classification toolkit"};
    app.require_subcommand(1);

    CommonTrainArgs targs;
    auto* train = app.add_subcommand("train", "train a model");
    train->add_option("--config", targs.config_path, "key=value config file");
    train->add_option("--set", targs.overrides, "config override key=value")->take_all();
    train->add_option("--data-dir", targs.data_dir, "dataset directory")->required();
    train->add_option("--manifest", targs.manifest, "manifest CSV (default data-dir/manifest.csv)");
    train->add_option("--vocab", targs.vocab, "vocabulary file (default data-dir/vocab.txt)");
    train->add_option("--out-dir", targs.out_dir, "output directory")->required();
    train->add_option("--train-features", targs.train_features, "train FMAP file (external)");
    train->add_option("--test-features", targs.test_features, "test FMAP file (external)");

    std::string eval_checkpoint, eval_split = "test", eval_features, eval_out;
    CommonTrainArgs eargs;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--checkpoint", eval_checkpoint, "checkpoint path")->required();
    eval->add_option("--data-dir", eargs.data_dir, "dataset directory")->required();
    eval->add_option("--manifest", eargs.manifest, "manifest CSV (default data-dir/manifest.csv)");
    eval->add_option("--split", eval_split, "split to evaluate: train or test")
        ->check(CLI::IsMember({"train", "test"}));
    eval->add_option("--features", eval_features, "FMAP file (external encoder)");
    eval->add_option("--out", eval_out, "report JSON path (default: print)");

    std::string pred_checkpoint, pred_fmap, pred_out;
    std::vector<std::string> pred_images;
    auto* predict = app.add_subcommand("predict", "score images with a checkpoint");
    predict->add_option("--checkpoint", pred_checkpoint, "checkpoint path")->required();
    predict->add_option("--images", pred_images, "image paths")->take_all();
    predict->add_option("--features", pred_fmap, "FMAP file (external encoder)");
    predict->add_option("--out", pred_out, "output JSON path (default: print)");

    std::size_t gc_seeds = 20;
    std::string gc_corrupt, gc_head = "both";
    double gc_tol = 1e-4;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
    gradcheck->add_option("--seeds", gc_seeds, "number of random seeds per head");
    gradcheck->add_option("--corrupt-op", gc_corrupt, "inject a gradient fault into this op");
    gradcheck->add_option("--tolerance", gc_tol, "max relative error");
    gradcheck->add_option("--head", gc_head, "gap, mldecoder, or both")
        ->check(CLI::IsMember({"gap", "mldecoder", "both"}));

    std::string sy_out;
    std::size_t sy_labels = 8, sy_train = 64, sy_test = 32, sy_size = 64;
    std::size_t sy_min = 1, sy_max = 3;
    std::uint64_t sy_seed = 42;
    auto* synth = app.add_subcommand("synth", "generate a synthetic glyph dataset");
    synth->add_option("--out", sy_out, "output directory")->required();
    synth->add_option("--labels", sy_labels, "number of label classes");
    synth->add_option("--train", sy_train, "training image count");
    synth->add_option("--test", sy_test, "test image count");
    synth->add_option("--size", sy_size, "image side length");
    synth->add_option("--min-glyphs", sy_min, "min glyphs per image");
    synth->add_option("--max-glyphs", sy_max, "max glyphs per image");
    synth->add_option("--seed", sy_seed, "generation seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (app.got_subcommand(train)) return cmd_train(targs);
        if (app.got_subcommand(eval))
            return cmd_eval(eval_checkpoint, eargs, eval_split, eval_features, eval_out);
        if (app.got_subcommand(predict))
            return cmd_predict(pred_checkpoint, pred_images, pred_fmap, pred_out);
        if (app.got_subcommand(gradcheck))
            return cmd_gradcheck(gc_seeds, gc_corrupt, gc_tol, gc_head);
        if (app.got_subcommand(synth))
            return cmd_synth(sy_out, sy_labels, sy_train, sy_test, sy_size, sy_min, sy_max,
                             sy_seed);
    } catch (const mlc::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const mlc::GroupOverflow& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const mlc::IndivisibleSpatialDims& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const mlc::UnsupportedOp& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const mlc::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const mlc::Divergence& e) {
        std::cerr << "training diverged: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const mlc::CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return kExitCheckpoint;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitOther;
    }
    return kExitOther;
}
