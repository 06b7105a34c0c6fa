#include <gtest/gtest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "mlc/rng.hpp"
#include "mlc/serialize.hpp"

namespace fs = std::filesystem;

namespace {

fs::path tmp_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / "mlc_cli_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd =
        std::string(MLC_BIN) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    if (status == -1) return -1;
    return WEXITSTATUS(status);
}

std::string read_file(const fs::path& p) {
    std::ifstream is(p);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

const std::string kSmallTrainSets =
    "--set image_size=16 --set stages=4x2,8x2 --set epochs=6 --set batch_size=4 "
    "--set warmup_iters=4 --set peak_lr=3e-3 --set augment=false --set seed=7";

fs::path make_dataset(const std::string& dirname) {
    const auto dir = tmp_dir(dirname);
    const auto log = dir / "synth.log";
    const int rc = run_cli("synth --out " + (dir / "data").string() +
                               " --labels 3 --train 8 --test 4 --size 16 --seed 11",
                           log);
    EXPECT_EQ(rc, 0) << read_file(log);
    return dir;
}

}  // namespace

TEST(Cli, NoSubcommandFails) {
    const auto dir = tmp_dir("nosub");
    EXPECT_EQ(run_cli("", dir / "out.log"), 2);
}

TEST(Cli, SynthWritesDataset) {
    const auto dir = tmp_dir("synth");
    const auto data = dir / "data";
    const int rc = run_cli("synth --out " + data.string() +
                               " --labels 4 --train 5 --test 2 --size 32 --seed 3",
                           dir / "out.log");
    ASSERT_EQ(rc, 0) << read_file(dir / "out.log");
    EXPECT_TRUE(fs::exists(data / "manifest.csv"));
    EXPECT_TRUE(fs::exists(data / "vocab.txt"));
    EXPECT_TRUE(fs::exists(data / "train" / "img_4.png"));
    EXPECT_TRUE(fs::exists(data / "test" / "img_1.png"));

    // invalid spec: more glyphs than labels
    EXPECT_EQ(run_cli("synth --out " + (dir / "bad").string() +
                          " --labels 2 --max-glyphs 5",
                      dir / "bad.log"),
              3);
}

TEST(Cli, TrainEvalPredictFlow) {
    const auto dir = make_dataset("flow");
    const auto data = (dir / "data").string();
    const auto out = (dir / "run").string();

    int rc = run_cli("train --data-dir " + data + " --out-dir " + out + " " +
                         kSmallTrainSets,
                     dir / "train.log");
    ASSERT_EQ(rc, 0) << read_file(dir / "train.log");
    EXPECT_TRUE(fs::exists(fs::path(out) / "best.ckpt"));
    EXPECT_TRUE(fs::exists(fs::path(out) / "final.ckpt"));
    EXPECT_TRUE(fs::exists(fs::path(out) / "train_log.jsonl"));

    const auto report_path = dir / "report.json";
    rc = run_cli("eval --checkpoint " + out + "/final.ckpt --data-dir " + data +
                     " --split test --out " + report_path.string(),
                 dir / "eval.log");
    ASSERT_EQ(rc, 0) << read_file(dir / "eval.log");
    auto report = nlohmann::json::parse(read_file(report_path));
    EXPECT_EQ(report["split"], "test");
    EXPECT_EQ(report["map_mode"], "macro");
    EXPECT_EQ(report["num_images"], 4);
    EXPECT_EQ(report["num_labels"], 3);
    EXPECT_TRUE(report["map"].is_number());
    EXPECT_GT(report["map"].get<double>(), 0.0);
    EXPECT_LE(report["map"].get<double>(), 1.0);
    ASSERT_EQ(report["per_label"].size(), 3u);
    EXPECT_TRUE(report["per_label"][0].contains("label"));
    EXPECT_TRUE(report["per_label"][0].contains("ap"));
    EXPECT_TRUE(report["total_params"].is_number());
    EXPECT_TRUE(report["head_params"].is_number());
    EXPECT_TRUE(report["flops_per_image"].is_number());
    EXPECT_TRUE(report["created_at"].is_string());

    const auto pred_path = dir / "pred.json";
    rc = run_cli("predict --checkpoint " + out + "/final.ckpt --images " + data +
                     "/test/img_0.png " + data + "/test/img_1.png --out " +
                     pred_path.string(),
                 dir / "predict.log");
    ASSERT_EQ(rc, 0) << read_file(dir / "predict.log");
    auto pred = nlohmann::json::parse(read_file(pred_path));
    ASSERT_EQ(pred.size(), 2u);
    EXPECT_TRUE(pred[0]["input"].get<std::string>().find("img_0.png") !=
                std::string::npos);
    ASSERT_EQ(pred[0]["scores"].size(), 3u);
    // scores are sorted descending
    double prev = 1.0;
    for (const auto& entry : pred[0]["scores"]) {
        const double s = entry["score"].get<double>();
        EXPECT_LE(s, prev + 1e-12);
        EXPECT_GE(s, 0.0);
        prev = s;
    }
}

TEST(Cli, EvalTrainSplitWorks) {
    const auto dir = make_dataset("evaltrain");
    const auto data = (dir / "data").string();
    const auto out = (dir / "run").string();
    int rc = run_cli("train --data-dir " + data + " --out-dir " + out + " " +
                         kSmallTrainSets + " --set epochs=1",
                     dir / "train.log");
    ASSERT_EQ(rc, 0) << read_file(dir / "train.log");
    rc = run_cli("eval --checkpoint " + out + "/final.ckpt --data-dir " + data +
                     " --split train",
                 dir / "eval.log");
    EXPECT_EQ(rc, 0) << read_file(dir / "eval.log");
    EXPECT_TRUE(read_file(dir / "eval.log").find("mAP") != std::string::npos);
}

TEST(Cli, GradcheckPassesCleanly) {
    const auto dir = tmp_dir("gradcheck");
    const int rc = run_cli("gradcheck --seeds 2", dir / "out.log");
    EXPECT_EQ(rc, 0) << read_file(dir / "out.log");
    const auto text = read_file(dir / "out.log");
    EXPECT_TRUE(text.find("[OK]") != std::string::npos) << text;
}

TEST(Cli, GradcheckCatchesInjectedFault) {
    const auto dir = tmp_dir("gradfault");
    const int rc = run_cli("gradcheck --seeds 1 --corrupt-op matmul", dir / "out.log");
    EXPECT_EQ(rc, 6) << read_file(dir / "out.log");
    EXPECT_TRUE(read_file(dir / "out.log").find("[FAIL]") != std::string::npos);

    // unknown op name is a configuration error
    EXPECT_EQ(run_cli("gradcheck --seeds 1 --corrupt-op frobnicate", dir / "bad.log"), 2);
}

TEST(Cli, BadConfigExitsWithTwo) {
    const auto dir = make_dataset("badcfg");
    const auto data = (dir / "data").string();
    EXPECT_EQ(run_cli("train --data-dir " + data + " --out-dir " + (dir / "o1").string() +
                          " --set nonsense=1",
                      dir / "a.log"),
              2);
    EXPECT_EQ(run_cli("train --data-dir " + data + " --out-dir " + (dir / "o2").string() +
                          " " + kSmallTrainSets + " --set head=mldecoder --set groups=99",
                      dir / "b.log"),
              2);
    EXPECT_EQ(run_cli("train --data-dir " + data + " --out-dir " + (dir / "o3").string() +
                          " " + kSmallTrainSets + " --set image_size=15",
                      dir / "c.log"),
              2);
}

TEST(Cli, MissingImageExitsWithThree) {
    const auto dir = tmp_dir("missingimg");
    const auto data = dir / "data";
    fs::create_directories(data);
    std::ofstream(data / "manifest.csv")
        << "path,split,labels\nghost.png,train,a\nghost2.png,test,a\n";
    std::ofstream(data / "vocab.txt") << "a\n";
    EXPECT_EQ(run_cli("train --data-dir " + data.string() + " --out-dir " +
                          (dir / "run").string() + " " + kSmallTrainSets,
                      dir / "out.log"),
              3);
}

TEST(Cli, NanFeaturesExitWithFour) {
    const auto dir = tmp_dir("nanfeat");
    const auto data = dir / "data";
    fs::create_directories(data);
    std::ofstream(data / "manifest.csv") << "path,split,labels\n"
                                         << "r0,train,a\nr1,train,b\n"
                                         << "r2,test,a\nr3,test,b\n";
    std::ofstream(data / "vocab.txt") << "a\nb\n";
    const float nan = std::numeric_limits<float>::quiet_NaN();
    mlc::write_fmap_file((data / "train.fmap").string(),
                         mlc::Tensor<float>::full({2, 2, 2, 3}, nan));
    mlc::write_fmap_file((data / "test.fmap").string(),
                         mlc::Tensor<float>::full({2, 2, 2, 3}, 0.5f));
    EXPECT_EQ(run_cli("train --data-dir " + data.string() + " --out-dir " +
                          (dir / "run").string() +
                          " --set encoder=external --set feature_dim=3" +
                          " --set epochs=1 --set batch_size=2 --set warmup_iters=1" +
                          " --train-features " + (data / "train.fmap").string() +
                          " --test-features " + (data / "test.fmap").string(),
                      dir / "out.log"),
              4);
}

TEST(Cli, CorruptCheckpointExitsWithFive) {
    const auto dir = make_dataset("badckpt");
    const auto junk = dir / "junk.ckpt";
    std::ofstream(junk, std::ios::binary) << "not a checkpoint";
    EXPECT_EQ(run_cli("eval --checkpoint " + junk.string() + " --data-dir " +
                          (dir / "data").string() + " --split test",
                      dir / "out.log"),
              5);
}

TEST(Cli, PredictExternalUsesFmapRecords) {
    const auto dir = tmp_dir("predext");
    const auto data = dir / "data";
    fs::create_directories(data);
    std::ofstream(data / "manifest.csv") << "path,split,labels\n"
                                         << "r0,train,a\nr1,train,b\n"
                                         << "r2,test,a\nr3,test,b\n";
    std::ofstream(data / "vocab.txt") << "a\nb\n";
    mlc::Rng rng(9);
    auto make_feats = [&](std::size_t n) {
        std::vector<float> v(n * 2 * 2 * 3);
        for (float& x : v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
        return mlc::Tensor<float>::from_data({n, 2, 2, 3}, std::move(v));
    };
    mlc::write_fmap_file((data / "train.fmap").string(), make_feats(2));
    mlc::write_fmap_file((data / "test.fmap").string(), make_feats(2));

    const auto out = (dir / "run").string();
    int rc = run_cli("train --data-dir " + data.string() + " --out-dir " + out +
                         " --set encoder=external --set feature_dim=3" +
                         " --set epochs=1 --set batch_size=2 --set warmup_iters=1" +
                         " --train-features " + (data / "train.fmap").string() +
                         " --test-features " + (data / "test.fmap").string(),
                     dir / "train.log");
    ASSERT_EQ(rc, 0) << read_file(dir / "train.log");

    const auto pred_path = dir / "pred.json";
    rc = run_cli("predict --checkpoint " + out + "/final.ckpt --features " +
                     (data / "test.fmap").string() + " --out " + pred_path.string(),
                 dir / "pred.log");
    ASSERT_EQ(rc, 0) << read_file(dir / "pred.log");
    auto pred = nlohmann::json::parse(read_file(pred_path));
    ASSERT_EQ(pred.size(), 2u);
    EXPECT_EQ(pred[0]["input"], "record_0");
    EXPECT_EQ(pred[1]["input"], "record_1");

    // eval in external mode needs --features
    EXPECT_EQ(run_cli("eval --checkpoint " + out + "/final.ckpt --data-dir " +
                          data.string() + " --split test",
                      dir / "eval_missing.log"),
              2);
    rc = run_cli("eval --checkpoint " + out + "/final.ckpt --data-dir " + data.string() +
                     " --split test --features " + (data / "test.fmap").string(),
                 dir / "eval.log");
    EXPECT_EQ(rc, 0) << read_file(dir / "eval.log");
}
