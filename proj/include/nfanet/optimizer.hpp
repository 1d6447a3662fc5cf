// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <vector>

#include "tensor.hpp"

namespace nfanet {

/// Adam with L2 weight decay folded into the gradient.
template <typename S>
class Adam {
public:
    Adam(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps)
    {
    }

    void step(const std::vector<Param<S>*>& params)
    {
        if (m_.empty()) {
            for (auto* p : params) {
                m_.emplace_back(p->size(), 0.0);
                v_.emplace_back(p->size(), 0.0);
            }
        }
        if (m_.size() != params.size()) throw ConfigError("Adam: parameter list changed between steps");
        ++t_;
        const double c1 = 1.0 - std::pow(b1_, t_);
        const double c2 = 1.0 - std::pow(b2_, t_);
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto& p = *params[k];
            auto& m = m_[k];
            auto& v = v_[k];
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double g = double(p.grad[i]) + wd_ * double(p.value[i]);
                m[i] = b1_ * m[i] + (1 - b1_) * g;
                v[i] = b2_ * v[i] + (1 - b2_) * g * g;
                p.value[i] = static_cast<S>(double(p.value[i]) - lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_));
            }
        }
    }

    double learning_rate() const noexcept { return lr_; }
    void set_learning_rate(double lr) noexcept { lr_ = lr; }
    long steps() const noexcept { return t_; }

private:
    double lr_, wd_, b1_, b2_, eps_;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

} // namespace nfanet
