#pragma once

#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mlc/ops.hpp"
#include "mlc/rng.hpp"
#include "mlc/serialize.hpp"

// Tiny convolutional encoder: a stack of conv -> bias -> relu stages over
// NHWC images. Every stage uses same-padding (odd kernels), so each stride-s
// stage maps H to H/s exactly; spatial dims must divide by the stage stride.
//
// An externally computed feature map (FMAP file) can stand in for the encoder
// output; see read_fmap in serialize.hpp.

namespace mlc {

struct EncoderStage {
    std::size_t channels = 0;
    std::size_t stride = 1;
};

struct TinyEncoderConfig {
    std::size_t in_channels = 3;
    std::size_t kernel = 3;
    std::vector<EncoderStage> stages = {{8, 2}, {16, 2}, {32, 2}};

    void validate() const {
        if (kernel == 0 || kernel % 2 == 0)
            throw ConfigError("encoder kernel must be odd, got " + std::to_string(kernel));
        if (stages.empty()) throw ConfigError("encoder needs at least one stage");
        for (const auto& s : stages) {
            if (s.channels == 0) throw ConfigError("encoder stage channels must be >= 1");
            if (s.stride == 0) throw ConfigError("encoder stage stride must be >= 1");
        }
    }

    /// Output (height, width, depth) for an input of the given spatial size.
    /// Throws IndivisibleSpatialDims when any stage stride does not divide
    /// its incoming extent.
    std::array<std::size_t, 3> output_dims(std::size_t height, std::size_t width) const {
        std::size_t h = height, w = width;
        for (std::size_t i = 0; i < stages.size(); ++i) {
            const std::size_t s = stages[i].stride;
            if (h % s != 0 || w % s != 0)
                throw IndivisibleSpatialDims("stage " + std::to_string(i) + ": " +
                                             std::to_string(h) + "x" + std::to_string(w) +
                                             " not divisible by stride " + std::to_string(s));
            h /= s;
            w /= s;
            if (h == 0 || w == 0)
                throw IndivisibleSpatialDims("stage " + std::to_string(i) +
                                             " collapses the spatial extent to zero");
        }
        return {h, w, stages.back().channels};
    }

    std::size_t out_depth() const { return stages.back().channels; }
};

template <typename S>
class TinyEncoder {
public:
    TinyEncoder() = default;

    TinyEncoder(TinyEncoderConfig config, std::uint64_t seed) : config_(std::move(config)) {
        config_.validate();
        Rng rng(mix_seed(seed, 0x656e63ULL));  // encoder stream
        std::size_t cin = config_.in_channels;
        const std::size_t k = config_.kernel;
        for (const auto& stage : config_.stages) {
            const std::size_t cout = stage.channels;
            const double scale = std::sqrt(2.0 / static_cast<double>(k * k * cin));
            std::vector<S> w(k * k * cin * cout);
            for (S& v : w) v = static_cast<S>(rng.normal() * scale);
            weights_.push_back(
                Tensor<S>::from_data({k, k, cin, cout}, std::move(w), true));
            biases_.push_back(Tensor<S>::zeros({cout}, true));
            cin = cout;
        }
    }

    const TinyEncoderConfig& config() const { return config_; }

    /// (B, H, W, in_channels) -> (B, H', W', out_depth)
    Tensor<S> forward(const Tensor<S>& images) const {
        if (images.rank() != 4 || images.shape()[3] != config_.in_channels)
            throw ShapeMismatch("encoder: expects (B,H,W," +
                                std::to_string(config_.in_channels) + "), got " +
                                shape_str(images.shape()));
        config_.output_dims(images.shape()[1], images.shape()[2]);
        const std::size_t pad = (config_.kernel - 1) / 2;
        Tensor<S> x = images;
        for (std::size_t i = 0; i < weights_.size(); ++i) {
            x = conv2d(x, weights_[i], config_.stages[i].stride, pad);
            x = add(x, biases_[i]);
            x = relu(x);
        }
        return x;
    }

    std::vector<std::pair<std::string, Tensor<S>>> named_params(
        const std::string& prefix = "encoder") const {
        std::vector<std::pair<std::string, Tensor<S>>> out;
        for (std::size_t i = 0; i < weights_.size(); ++i) {
            out.emplace_back(prefix + ".stage" + std::to_string(i) + ".weight", weights_[i]);
            out.emplace_back(prefix + ".stage" + std::to_string(i) + ".bias", biases_[i]);
        }
        return out;
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (std::size_t i = 0; i < weights_.size(); ++i)
            n += weights_[i].size() + biases_[i].size();
        return n;
    }

    /// Multiply-accumulate count per image: sum over stages of
    /// Ho * Wo * Cout * kh * kw * Cin.
    std::size_t flops_per_image(std::size_t height, std::size_t width) const {
        std::size_t h = height, w = width, cin = config_.in_channels, total = 0;
        const std::size_t k = config_.kernel;
        for (const auto& stage : config_.stages) {
            h /= stage.stride;
            w /= stage.stride;
            total += h * w * stage.channels * k * k * cin;
            cin = stage.channels;
        }
        return total;
    }

private:
    TinyEncoderConfig config_;
    std::vector<Tensor<S>> weights_;
    std::vector<Tensor<S>> biases_;
};

}  // namespace mlc
