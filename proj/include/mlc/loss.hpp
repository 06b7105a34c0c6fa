#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mlc/ops.hpp"

// Asymmetric multi-label classification loss over logits z and binary
// targets y, per label:
//
//   L = y * sigmoid(-z)^gamma_pos * softplus(-z)
//     + (1 - y) * sigmoid(z)^gamma_neg * softplus(z)
//
// With p = sigmoid(z) this is the focal-style form
//   y (1-p)^g+ (-log p) + (1-y) p^g- (-log(1-p))
// computed without ever forming p first, so extreme logits stay finite.
// gamma = 0 drops the corresponding modulating factor entirely (it is the
// constant 1), which reduces the loss to plain binary cross-entropy.

namespace mlc {

enum class Reduction { mean, sum };

struct AsymmetricLossConfig {
    double gamma_pos = 0.0;
    double gamma_neg = 5.0;
    Reduction reduction = Reduction::mean;

    void validate() const {
        if (gamma_pos < 0.0 || gamma_neg < 0.0)
            throw ConfigError("loss: gamma_pos and gamma_neg must be >= 0");
    }
};

/// Scalar reference form of the per-label loss.
inline double per_label_loss(double target, double logit, double gamma_pos = 0.0,
                             double gamma_neg = 5.0) {
    if (target != 0.0 && target != 1.0)
        throw NonBinaryTarget("per_label_loss: target " + std::to_string(target));
    double loss = 0.0;
    if (target == 1.0) {
        double term = softplus_scalar(-logit);
        if (gamma_pos != 0.0) term *= std::pow(sigmoid_scalar(-logit), gamma_pos);
        loss = term;
    } else {
        double term = softplus_scalar(logit);
        if (gamma_neg != 0.0) term *= std::pow(sigmoid_scalar(logit), gamma_neg);
        loss = term;
    }
    return loss;
}

/// Differentiable batch loss. logits is (B, K); targets is a row-major
/// multi-hot vector of the same extent with entries in {0, 1}.
template <typename S>
Tensor<S> asymmetric_loss(const Tensor<S>& logits, const std::vector<std::uint8_t>& targets,
                          const AsymmetricLossConfig& cfg = {}) {
    cfg.validate();
    if (logits.size() == 0) throw EmptyInput("asymmetric_loss: empty logits");
    if (logits.rank() != 2)
        throw ShapeMismatch("asymmetric_loss: logits must be (B,K), got " +
                            shape_str(logits.shape()));
    if (targets.size() != logits.size())
        throw ShapeMismatch("asymmetric_loss: " + std::to_string(targets.size()) +
                            " targets for " + std::to_string(logits.size()) + " logits");
    std::vector<S> y(targets.size()), yc(targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i) {
        if (targets[i] > 1)
            throw NonBinaryTarget("asymmetric_loss: target " + std::to_string(targets[i]) +
                                  " at index " + std::to_string(i));
        y[i] = static_cast<S>(targets[i]);
        yc[i] = static_cast<S>(1 - targets[i]);
    }
    Tensor<S> Y = Tensor<S>::from_data(logits.shape(), std::move(y));
    Tensor<S> Yc = Tensor<S>::from_data(logits.shape(), std::move(yc));

    Tensor<S> zneg = scalar_mul(logits, S(-1));
    Tensor<S> pos = mul(Y, softplus(zneg));
    if (cfg.gamma_pos != 0.0)
        pos = mul(pos, power(sigmoid(zneg), static_cast<S>(cfg.gamma_pos)));
    Tensor<S> neg = mul(Yc, softplus(logits));
    if (cfg.gamma_neg != 0.0)
        neg = mul(neg, power(sigmoid(logits), static_cast<S>(cfg.gamma_neg)));
    Tensor<S> total = add(pos, neg);

    std::vector<std::size_t> axes = {0, 1};
    return cfg.reduction == Reduction::mean ? mean_axes(total, axes) : sum_axes(total, axes);
}

}  // namespace mlc
