#pragma once

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "mlc/model.hpp"
#include "mlc/optim.hpp"

// Single-threaded training loop. One run consumes deterministic RNG streams
// keyed off (seed, purpose, epoch), so identical configuration and data give
// bitwise-identical checkpoints and logs. The per-epoch JSON-lines log holds
// epoch, mean loss, test mAP, and the last learning rate used; no wall-clock
// fields, so logs are reproducible too.

namespace mlc {

struct TrainInputs {
    std::vector<LabeledExample> train;
    std::vector<LabeledExample> test;
    bool external = false;
    Tensor<float> train_features;  // (N, H', W', D) when external
    Tensor<float> test_features;
};

struct EpochStats {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double test_map = 0.0;
    double last_lr = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> epochs;
    double final_train_map = 0.0;
    double final_test_map = 0.0;
    double best_test_map = 0.0;
    std::size_t total_iters = 0;
    std::string best_path;
    std::string final_path;
    std::string log_path;
};

namespace detail {

template <typename S>
Tensor<S> tensor_cast(const Tensor<float>& t) {
    if constexpr (std::is_same_v<S, float>) {
        return t;
    } else {
        std::vector<S> data(t.size());
        for (std::size_t i = 0; i < t.size(); ++i) data[i] = static_cast<S>(t.data()[i]);
        return Tensor<S>::from_data(t.shape(), std::move(data));
    }
}

inline Tensor<float> slice_rows(const Tensor<float>& t, const std::vector<std::size_t>& rows) {
    if (t.rank() < 2) throw ShapeMismatch("slice_rows: rank >= 2 required");
    std::size_t row_size = t.size() / t.shape()[0];
    std::vector<float> data;
    data.reserve(rows.size() * row_size);
    for (std::size_t r : rows) {
        if (r >= t.shape()[0]) throw ShapeMismatch("slice_rows: row out of range");
        const float* src = &t.data()[r * row_size];
        data.insert(data.end(), src, src + row_size);
    }
    std::vector<std::size_t> shape = t.shape();
    shape[0] = rows.size();
    return Tensor<float>::from_data(std::move(shape), std::move(data));
}

template <typename S>
std::pair<Tensor<S>, std::vector<std::uint8_t>> assemble_batch(
    const TrainInputs& data, bool test_split, const std::vector<std::size_t>& indices,
    Rng* augment_rng) {
    const auto& examples = test_split ? data.test : data.train;
    if (data.external) {
        const auto& feats = test_split ? data.test_features : data.train_features;
        std::vector<std::uint8_t> targets;
        for (std::size_t idx : indices) {
            const auto& t = examples.at(idx).target;
            targets.insert(targets.end(), t.begin(), t.end());
        }
        return {tensor_cast<S>(slice_rows(feats, indices)), std::move(targets)};
    }
    auto [batch, targets] = make_batch(examples, indices, augment_rng);
    return {tensor_cast<S>(batch), std::move(targets)};
}

}  // namespace detail

/// Sigmoid scores for one split, row-major (N, K), computed without autograd.
template <typename S>
std::vector<double> collect_scores(const Model<S>& model, const TrainInputs& data,
                                   bool test_split, std::size_t batch_size) {
    NoGradGuard ng;
    const auto& examples = test_split ? data.test : data.train;
    std::vector<double> scores;
    scores.reserve(examples.size() * model.num_labels);
    for (std::size_t start = 0; start < examples.size(); start += batch_size) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(start + batch_size, examples.size()); ++i)
            idx.push_back(i);
        auto [batch, targets] = detail::assemble_batch<S>(data, test_split, idx, nullptr);
        Tensor<S> logits = data.external ? model.forward_features(batch)
                                         : model.forward_images(batch);
        Tensor<S> probs = sigmoid(logits);
        for (S v : probs.data()) scores.push_back(static_cast<double>(v));
    }
    return scores;
}

template <typename S>
std::vector<std::uint8_t> flat_targets(const std::vector<LabeledExample>& examples) {
    std::vector<std::uint8_t> t;
    for (const auto& ex : examples) t.insert(t.end(), ex.target.begin(), ex.target.end());
    return t;
}

template <typename S>
double evaluate_map(const Model<S>& model, const TrainInputs& data, bool test_split,
                    const TrainConfig& cfg) {
    const auto& examples = test_split ? data.test : data.train;
    auto scores = collect_scores(model, data, test_split, cfg.batch_size);
    auto targets = flat_targets<S>(examples);
    return mean_average_precision(scores, targets, model.num_labels, cfg.parsed_map_mode(),
                                  ThresholdGrid::uniform(cfg.threshold_count));
}

template <typename S>
void save_model_checkpoint(const std::string& path, const Model<S>& model,
                           const TrainConfig& cfg, const LabelVocabulary& vocab) {
    save_checkpoint(path, cfg.echo(), vocab.to_text(), model.named_params());
}

template <typename S = float>
TrainResult train_model(Model<S>& model, const TrainConfig& cfg, const LabelVocabulary& vocab,
                        const TrainInputs& data, const std::string& out_dir) {
    cfg.validate();
    const std::size_t K = vocab.size();
    if (K == 0) throw ConfigError("train: empty vocabulary");
    if (data.train.empty()) throw EmptyDataset("train: no training examples");
    if (data.test.empty()) throw EmptyDataset("train: no test examples");
    for (const auto& ex : data.train)
        if (ex.target.size() != K)
            throw ShapeMismatch("train: example " + ex.source_id + " has " +
                                std::to_string(ex.target.size()) + " targets for " +
                                std::to_string(K) + " labels");
    if (data.external) {
        if (!data.train_features.valid() || !data.test_features.valid())
            throw InvalidSpec("train: external mode needs train and test feature maps");
        if (data.train_features.shape()[0] != data.train.size() ||
            data.test_features.shape()[0] != data.test.size())
            throw InvalidSpec("train: feature map batch does not match manifest rows");
        if (data.train_features.shape()[3] != cfg.feature_dim)
            throw InvalidSpec("train: feature depth " +
                              std::to_string(data.train_features.shape()[3]) +
                              " does not match configured feature_dim " +
                              std::to_string(cfg.feature_dim));
    }

    std::filesystem::create_directories(out_dir);
    TrainResult result;
    result.log_path = (std::filesystem::path(out_dir) / "train_log.jsonl").string();
    result.best_path = (std::filesystem::path(out_dir) / "best.ckpt").string();
    result.final_path = (std::filesystem::path(out_dir) / "final.ckpt").string();
    std::ofstream log(result.log_path, std::ios::trunc);
    if (!log) throw DataError("cannot open training log: " + result.log_path);

    Adam<S> opt(model.named_params());
    const std::size_t n = data.train.size();
    const std::size_t ipe = (n + cfg.batch_size - 1) / cfg.batch_size;
    result.total_iters = cfg.epochs * ipe;
    const ScheduleConfig sched = cfg.schedule_config(result.total_iters);

    bool have_best = false;
    std::size_t it = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(mix_seed(cfg.seed, 0x657068ULL, epoch));
        shuffle_rng.shuffle(order);
        Rng augment_rng(mix_seed(cfg.seed, 0x617567ULL, epoch));
        Rng* aug = (cfg.augment && !data.external) ? &augment_rng : nullptr;

        double loss_sum = 0.0;
        double last_lr = 0.0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            std::vector<std::size_t> idx(order.begin() + start,
                                         order.begin() +
                                             std::min(start + cfg.batch_size, n));
            auto [batch, targets] = detail::assemble_batch<S>(data, false, idx, aug);
            Tensor<S> logits = data.external ? model.forward_features(batch)
                                             : model.forward_images(batch);
            Tensor<S> loss = asymmetric_loss(logits, targets, cfg.loss_config());
            const double lv = static_cast<double>(loss.item());
            if (!std::isfinite(lv))
                throw Divergence("loss is not finite at iteration " + std::to_string(it));
            loss_sum += lv;
            backward(loss);
            last_lr = learning_rate_at(sched, it);
            opt.step(last_lr);
            opt.zero_grad();
            ++it;
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.mean_loss = loss_sum / static_cast<double>(ipe);
        stats.test_map = evaluate_map(model, data, true, cfg);
        stats.last_lr = last_lr;
        result.epochs.push_back(stats);

        nlohmann::json line = {{"epoch", stats.epoch},
                               {"mean_loss", stats.mean_loss},
                               {"test_map", stats.test_map},
                               {"lr", stats.last_lr}};
        log << line.dump() << '\n';
        log.flush();

        if (!have_best || stats.test_map > result.best_test_map) {
            have_best = true;
            result.best_test_map = stats.test_map;
            save_model_checkpoint(result.best_path, model, cfg, vocab);
        }
    }

    result.final_train_map = evaluate_map(model, data, false, cfg);
    result.final_test_map = evaluate_map(model, data, true, cfg);
    if (!have_best) {  // zero-epoch run: best is the initial state
        result.best_test_map = result.final_test_map;
        save_model_checkpoint(result.best_path, model, cfg, vocab);
    }
    save_model_checkpoint(result.final_path, model, cfg, vocab);
    return result;
}

}  // namespace mlc
