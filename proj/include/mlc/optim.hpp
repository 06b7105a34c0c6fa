#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mlc/tensor.hpp"

// Learning-rate schedule: linear warmup to the peak rate, then cosine decay
// to the final rate over the remaining iterations, landing exactly on
// final_lr at the last iteration:
//
//   it <  warmup:  peak * (it + 1) / warmup
//   it >= warmup:  final + 0.5 * (peak - final) * (1 + cos(pi * u)),
//                  u = (it - warmup) / (total - 1 - warmup)

namespace mlc {

struct ScheduleConfig {
    double peak_lr = 1e-3;
    double final_lr = 1e-6;
    std::size_t warmup_iters = 200;
    std::size_t total_iters = 0;
};

inline double learning_rate_at(const ScheduleConfig& c, std::size_t it) {
    if (c.total_iters == 0) throw OutOfRange("schedule: total_iters is 0");
    if (it >= c.total_iters)
        throw OutOfRange("schedule: iteration " + std::to_string(it) + " >= total " +
                         std::to_string(c.total_iters));
    if (it < c.warmup_iters)
        return c.peak_lr * static_cast<double>(it + 1) / static_cast<double>(c.warmup_iters);
    const std::size_t last = c.total_iters - 1;
    if (last <= c.warmup_iters) return c.final_lr;  // no room for a cosine segment
    const double u = static_cast<double>(it - c.warmup_iters) /
                     static_cast<double>(last - c.warmup_iters);
    return c.final_lr +
           0.5 * (c.peak_lr - c.final_lr) * (1.0 + std::cos(3.14159265358979323846 * u));
}

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam over a fixed parameter list. Parameters without an accumulated
/// gradient are left untouched by a step.
template <typename S>
class Adam {
public:
    explicit Adam(std::vector<std::pair<std::string, Tensor<S>>> params, AdamConfig cfg = {})
        : params_(std::move(params)), cfg_(cfg) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i].second.size(), 0.0);
            v_[i].assign(params_[i].second.size(), 0.0);
        }
    }

    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Tensor<S>& p = params_[i].second;
            const auto& grad = p.grad();
            if (grad.empty()) continue;
            auto& vals = p.data();
            for (std::size_t j = 0; j < vals.size(); ++j) {
                const double g = static_cast<double>(grad[j]);
                if (!std::isfinite(g))
                    throw NonFiniteGrad("adam: non-finite gradient in " + params_[i].first);
                m_[i][j] = cfg_.beta1 * m_[i][j] + (1.0 - cfg_.beta1) * g;
                v_[i][j] = cfg_.beta2 * v_[i][j] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = m_[i][j] / bc1;
                const double vhat = v_[i][j] / bc2;
                vals[j] = static_cast<S>(static_cast<double>(vals[j]) -
                                         lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        }
    }

    void zero_grad() {
        for (auto& [name, p] : params_) p.zero_grad();
    }

    std::size_t steps_taken() const { return t_; }
    const std::vector<std::pair<std::string, Tensor<S>>>& params() const { return params_; }

private:
    std::vector<std::pair<std::string, Tensor<S>>> params_;
    AdamConfig cfg_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

}  // namespace mlc
