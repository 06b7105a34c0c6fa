#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mlc/config.hpp"
#include "mlc/data.hpp"
#include "mlc/decoder.hpp"
#include "mlc/encoder.hpp"
#include "mlc/serialize.hpp"

// Composite model: an optional tiny conv encoder (or externally computed
// feature maps) feeding a GAP or group-decoding classification head.

namespace mlc {

enum class EncoderKind { tiny, external };
enum class HeadKind { gap, mldecoder };

template <typename S>
struct Model {
    EncoderKind encoder_kind = EncoderKind::tiny;
    HeadKind head_kind = HeadKind::gap;
    TinyEncoder<S> encoder;
    GapDecoder<S> gap;
    MlDecoder<S> mld;
    std::size_t feature_dim = 0;
    std::size_t num_labels = 0;

    /// (B, H, W, 3) images -> (B, K) logits; tiny-encoder models only.
    Tensor<S> forward_images(const Tensor<S>& images) const {
        if (encoder_kind != EncoderKind::tiny)
            throw ConfigError("model: external-feature model takes feature maps, not images");
        return forward_features(encoder.forward(images));
    }

    /// (B, H', W', D) feature maps -> (B, K) logits.
    Tensor<S> forward_features(const Tensor<S>& features) const {
        return head_kind == HeadKind::gap ? gap.forward(features) : mld.forward(features);
    }

    std::vector<std::pair<std::string, Tensor<S>>> named_params() const {
        std::vector<std::pair<std::string, Tensor<S>>> out;
        if (encoder_kind == EncoderKind::tiny) out = encoder.named_params();
        auto head = head_kind == HeadKind::gap ? gap.named_params() : mld.named_params();
        out.insert(out.end(), head.begin(), head.end());
        return out;
    }

    std::size_t param_count() const {
        std::size_t n = head_param_count();
        if (encoder_kind == EncoderKind::tiny) n += encoder.param_count();
        return n;
    }

    std::size_t head_param_count() const {
        return head_kind == HeadKind::gap ? gap.param_count() : mld.param_count();
    }

    /// MACs per image for a full forward pass from an image of the given
    /// size; tiny-encoder models only.
    std::size_t flops_per_image(std::size_t image_h, std::size_t image_w) const {
        if (encoder_kind != EncoderKind::tiny)
            throw ConfigError("model: flops_per_image needs the tiny encoder");
        const auto dims = encoder.config().output_dims(image_h, image_w);
        return encoder.flops_per_image(image_h, image_w) +
               flops_per_feature_map(dims[0], dims[1]);
    }

    /// MACs per example for the head alone, from a (H', W') feature map.
    std::size_t flops_per_feature_map(std::size_t feat_h, std::size_t feat_w) const {
        return head_kind == HeadKind::gap ? gap.flops_per_image(feat_h, feat_w)
                                          : mld.flops_per_image(feat_h, feat_w);
    }
};

template <typename S>
Model<S> build_model(const TrainConfig& cfg, std::size_t num_labels) {
    cfg.validate();
    if (num_labels == 0) throw ConfigError("model: num_labels must be >= 1");
    Model<S> m;
    m.num_labels = num_labels;
    m.head_kind = cfg.head == "gap" ? HeadKind::gap : HeadKind::mldecoder;
    if (cfg.encoder == "tiny") {
        m.encoder_kind = EncoderKind::tiny;
        m.encoder = TinyEncoder<S>(cfg.encoder_config(), cfg.seed);
        m.feature_dim = m.encoder.config().out_depth();
    } else {
        m.encoder_kind = EncoderKind::external;
        m.feature_dim = cfg.feature_dim;
    }
    if (m.head_kind == HeadKind::gap)
        m.gap = GapDecoder<S>(m.feature_dim, num_labels, cfg.seed);
    else
        m.mld = MlDecoder<S>(cfg.mld_config(num_labels, m.feature_dim), cfg.seed);
    return m;
}

/// Copies checkpoint tensors into the model's parameters by name.
template <typename S>
void load_weights(Model<S>& model, const Checkpoint<S>& ck) {
    for (auto& [name, param] : model.named_params()) {
        const Tensor<S>& stored = ck.find(name);
        if (stored.shape() != param.shape())
            throw CheckpointError("checkpoint tensor " + name + " has shape " +
                                  shape_str(stored.shape()) + ", model expects " +
                                  shape_str(param.shape()));
        param.data() = stored.data();
    }
}

template <typename S>
struct RestoredModel {
    TrainConfig config;
    LabelVocabulary vocab;
    Model<S> model;
};

template <typename S>
RestoredModel<S> model_from_checkpoint(const std::string& path) {
    Checkpoint<S> ck = load_checkpoint<S>(path);
    RestoredModel<S> r;
    try {
        r.config = TrainConfig::from_text(ck.config_text);
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("checkpoint config is invalid: ") + e.what());
    }
    r.vocab = LabelVocabulary::from_text(ck.vocab_text);
    if (r.vocab.size() == 0) throw CheckpointError("checkpoint has an empty vocabulary");
    r.model = build_model<S>(r.config, r.vocab.size());
    load_weights(r.model, ck);
    return r;
}

}  // namespace mlc
