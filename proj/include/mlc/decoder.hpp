#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mlc/ops.hpp"
#include "mlc/rng.hpp"

// Classification heads over a (B, H, W, D) feature map.
//
//   GapDecoder      global average pool -> linear -> per-label logits
//
//   MlDecoder       G learned group queries cross-attend the H*W feature
//                   tokens (no self-attention), then R' = LN1(R) and
//                   R'' = LN2(R' + FFN(R')) with the residual around the FFN
//                   only; each group emits s = ceil(K / G) label slots via a
//                   group readout and the first K slots become the logits.

namespace mlc {

template <typename S>
class GapDecoder {
public:
    GapDecoder() = default;

    GapDecoder(std::size_t feature_dim, std::size_t num_labels, std::uint64_t seed)
        : feature_dim_(feature_dim), num_labels_(num_labels) {
        if (feature_dim == 0 || num_labels == 0)
            throw ConfigError("gap decoder: feature_dim and num_labels must be >= 1");
        Rng rng(mix_seed(seed, 0x676170ULL));  // gap stream
        const double scale = std::sqrt(1.0 / static_cast<double>(feature_dim));
        std::vector<S> w(feature_dim * num_labels);
        for (S& v : w) v = static_cast<S>(rng.normal() * scale);
        weight_ = Tensor<S>::from_data({feature_dim, num_labels}, std::move(w), true);
        bias_ = Tensor<S>::zeros({num_labels}, true);
    }

    /// (B, H, W, D) -> (B, K) logits
    Tensor<S> forward(const Tensor<S>& features) const {
        if (features.rank() != 4 || features.shape()[3] != feature_dim_)
            throw ShapeMismatch("gap decoder: expects (B,H,W," + std::to_string(feature_dim_) +
                                "), got " + shape_str(features.shape()));
        Tensor<S> pooled = mean_axes(features, {1, 2});  // (B, D)
        return add(matmul(pooled, weight_), bias_);
    }

    std::vector<std::pair<std::string, Tensor<S>>> named_params(
        const std::string& prefix = "decoder") const {
        return {{prefix + ".weight", weight_}, {prefix + ".bias", bias_}};
    }

    std::size_t param_count() const { return feature_dim_ * num_labels_ + num_labels_; }

    /// MACs per image: the pooling pass (H*W*D) plus the projection (K*D).
    std::size_t flops_per_image(std::size_t height, std::size_t width) const {
        return height * width * feature_dim_ + num_labels_ * feature_dim_;
    }

    std::size_t num_labels() const { return num_labels_; }
    std::size_t feature_dim() const { return feature_dim_; }

private:
    std::size_t feature_dim_ = 0;
    std::size_t num_labels_ = 0;
    Tensor<S> weight_;
    Tensor<S> bias_;
};

/// Scaled dot-product cross-attention. q is (G, d) or (B, G, d); k and v are
/// (B, N, d). Returns (B, G, d). When attention_out is given it receives a
/// detached copy of the (B, G, N) attention probabilities.
template <typename S>
Tensor<S> cross_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                          Tensor<S>* attention_out = nullptr) {
    if (q.rank() < 2 || k.rank() < 2 || v.rank() < 2)
        throw ShapeMismatch("cross_attention: inputs need rank >= 2");
    const std::size_t d = q.shape().back();
    if (k.shape().back() != d)
        throw ShapeMismatch("cross_attention: query dim " + std::to_string(d) +
                            " vs key dim " + std::to_string(k.shape().back()));
    std::vector<std::size_t> perm(k.rank());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::swap(perm[perm.size() - 1], perm[perm.size() - 2]);
    Tensor<S> kt = transpose(k, perm);  // (B, d, N)
    Tensor<S> scores =
        scalar_mul(matmul(q, kt), static_cast<S>(1.0 / std::sqrt(static_cast<double>(d))));
    Tensor<S> attn = softmax_lastdim(scores);  // (B, G, N)
    if (attention_out) *attention_out = attn.detach();
    return matmul(attn, v);  // (B, G, d)
}

struct MlDecoderConfig {
    std::size_t feature_dim = 32;
    std::size_t num_labels = 0;
    std::size_t groups = 0;    // 0 -> ceil(num_labels / 4)
    std::size_t embed_dim = 32;
    std::size_t ffn_dim = 0;   // 0 -> 2 * embed_dim
    bool shared_readout = false;

    MlDecoderConfig resolved() const {
        MlDecoderConfig c = *this;
        if (c.num_labels == 0) throw ConfigError("ml decoder: num_labels must be >= 1");
        if (c.feature_dim == 0) throw ConfigError("ml decoder: feature_dim must be >= 1");
        if (c.embed_dim == 0) throw ConfigError("ml decoder: embed_dim must be >= 1");
        if (c.groups == 0) c.groups = (c.num_labels + 3) / 4;
        if (c.ffn_dim == 0) c.ffn_dim = 2 * c.embed_dim;
        if (c.groups > c.num_labels)
            throw GroupOverflow("ml decoder: " + std::to_string(c.groups) +
                                " groups exceed " + std::to_string(c.num_labels) + " labels");
        return c;
    }

    std::size_t slots_per_group() const { return (num_labels + groups - 1) / groups; }
};

template <typename S>
class MlDecoder {
public:
    MlDecoder() = default;

    MlDecoder(const MlDecoderConfig& config, std::uint64_t seed)
        : cfg_(config.resolved()) {
        const std::size_t D = cfg_.feature_dim, d = cfg_.embed_dim, f = cfg_.ffn_dim;
        const std::size_t G = cfg_.groups, K = cfg_.num_labels, s = cfg_.slots_per_group();
        Rng rng(mix_seed(seed, 0x6d6c64ULL));  // mld stream

        auto init = [&rng](std::vector<std::size_t> shape, double scale) {
            std::vector<S> data(shape_size(shape));
            for (S& v : data) v = static_cast<S>(rng.normal() * scale);
            return Tensor<S>::from_data(std::move(shape), std::move(data), true);
        };
        const double dk = std::sqrt(1.0 / static_cast<double>(D));
        const double dd = std::sqrt(1.0 / static_cast<double>(d));
        const double df = std::sqrt(1.0 / static_cast<double>(f));

        queries_ = init({G, d}, dd);
        key_w_ = init({D, d}, dk);
        key_b_ = Tensor<S>::zeros({d}, true);
        value_w_ = init({D, d}, dk);
        value_b_ = Tensor<S>::zeros({d}, true);
        norm1_gain_ = Tensor<S>::full({d}, S(1), true);
        norm1_shift_ = Tensor<S>::zeros({d}, true);
        ffn_w1_ = init({d, f}, std::sqrt(2.0 / static_cast<double>(d)));
        ffn_b1_ = Tensor<S>::zeros({f}, true);
        ffn_w2_ = init({f, d}, df);
        ffn_b2_ = Tensor<S>::zeros({d}, true);
        norm2_gain_ = Tensor<S>::full({d}, S(1), true);
        norm2_shift_ = Tensor<S>::zeros({d}, true);
        if (cfg_.shared_readout)
            readout_w_ = init({d, s}, dd);
        else
            readout_w_ = init({G, d, s}, dd);
        readout_b_ = Tensor<S>::zeros({K}, true);

        // Constant 0/1 matrix dropping the trailing G*s - K slots.
        std::vector<S> sel(G * s * K, S(0));
        for (std::size_t j = 0; j < K; ++j) sel[j * K + j] = S(1);
        select_ = Tensor<S>::from_data({G * s, K}, std::move(sel), false);
    }

    const MlDecoderConfig& config() const { return cfg_; }

    /// (B, H, W, D) -> (B, K) logits
    Tensor<S> forward(const Tensor<S>& features, Tensor<S>* attention_out = nullptr) const {
        if (features.rank() != 4 || features.shape()[3] != cfg_.feature_dim)
            throw ShapeMismatch("ml decoder: expects (B,H,W," +
                                std::to_string(cfg_.feature_dim) + "), got " +
                                shape_str(features.shape()));
        const std::size_t B = features.shape()[0];
        const std::size_t N = features.shape()[1] * features.shape()[2];
        const std::size_t G = cfg_.groups, d = cfg_.embed_dim;
        const std::size_t s = cfg_.slots_per_group(), K = cfg_.num_labels;

        Tensor<S> x = reshape(features, {B, N, cfg_.feature_dim});
        Tensor<S> k = add(matmul(x, key_w_), key_b_);      // (B, N, d)
        Tensor<S> v = add(matmul(x, value_w_), value_b_);  // (B, N, d)
        Tensor<S> ctx = cross_attention(queries_, k, v, attention_out);  // (B, G, d)

        Tensor<S> r1 = layer_norm_lastdim(ctx, norm1_gain_, norm1_shift_);
        Tensor<S> h = relu(add(matmul(r1, ffn_w1_), ffn_b1_));
        h = add(matmul(h, ffn_w2_), ffn_b2_);
        Tensor<S> r2 = layer_norm_lastdim(add(r1, h), norm2_gain_, norm2_shift_);  // (B, G, d)

        Tensor<S> slots;
        if (cfg_.shared_readout) {
            slots = matmul(r2, readout_w_);  // (B, G, s)
        } else {
            Tensor<S> grouped = transpose(r2, {1, 0, 2});        // (G, B, d)
            slots = transpose(matmul(grouped, readout_w_), {1, 0, 2});  // (B, G, s)
        }
        Tensor<S> flat = reshape(slots, {B, G * s});
        return add(matmul(flat, select_), readout_b_);  // (B, K)
    }

    std::vector<std::pair<std::string, Tensor<S>>> named_params(
        const std::string& prefix = "decoder") const {
        return {
            {prefix + ".queries", queries_},
            {prefix + ".key_proj.weight", key_w_},
            {prefix + ".key_proj.bias", key_b_},
            {prefix + ".value_proj.weight", value_w_},
            {prefix + ".value_proj.bias", value_b_},
            {prefix + ".norm1.gain", norm1_gain_},
            {prefix + ".norm1.shift", norm1_shift_},
            {prefix + ".ffn.w1", ffn_w1_},
            {prefix + ".ffn.b1", ffn_b1_},
            {prefix + ".ffn.w2", ffn_w2_},
            {prefix + ".ffn.b2", ffn_b2_},
            {prefix + ".norm2.gain", norm2_gain_},
            {prefix + ".norm2.shift", norm2_shift_},
            {prefix + ".readout.weight", readout_w_},
            {prefix + ".readout.bias", readout_b_},
        };
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : named_params()) n += t.size();
        return n;
    }

    /// MACs per image: key/value projections, attention scores and context,
    /// FFN, and group readout. Norms, softmax, and the 0/1 slot-selection
    /// matrix are excluded.
    std::size_t flops_per_image(std::size_t height, std::size_t width) const {
        const std::size_t N = height * width;
        const std::size_t D = cfg_.feature_dim, d = cfg_.embed_dim, f = cfg_.ffn_dim;
        const std::size_t G = cfg_.groups, s = cfg_.slots_per_group();
        return 2 * N * D * d + 2 * G * N * d + G * (2 * d * f) + G * d * s;
    }

    std::size_t num_labels() const { return cfg_.num_labels; }

private:
    MlDecoderConfig cfg_;
    Tensor<S> queries_;
    Tensor<S> key_w_, key_b_, value_w_, value_b_;
    Tensor<S> norm1_gain_, norm1_shift_;
    Tensor<S> ffn_w1_, ffn_b1_, ffn_w2_, ffn_b2_;
    Tensor<S> norm2_gain_, norm2_shift_;
    Tensor<S> readout_w_, readout_b_;
    Tensor<S> select_;
};

}  // namespace mlc
