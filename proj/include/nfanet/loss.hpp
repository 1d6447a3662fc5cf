// SPDX-License-Identifier: Apache-2.0
//
// Cross-entropy plus soft-Dice loss over two-class logits.

#pragma once

#include <cmath>
#include <vector>

#include "tensor.hpp"

namespace nfanet {

enum class Supervision {
    /// Only pixels inside point squares (all positive) contribute.
    point_positive_only,
    /// Every pixel contributes.
    dense,
};

template <typename S>
struct LossResult {
    double value = 0.0;
    double cross_entropy = 0.0;
    double dice = 0.0; ///< soft-Dice coefficient, not the loss term
    std::size_t supervised_pixels = 0;
    Tensor4<S> grad; ///< d loss / d logits
};

inline constexpr double dice_smooth = 1.0;

/// loss = mean CE + (1 - soft-Dice), soft-Dice = (2 sum(p g) + 1) / (sum p + sum g + 1)
/// with p the foreground probability. Both terms pool over the whole batch.
///
/// In point_positive_only mode the supervised set is {target == 1}, extended
/// by `extra_negatives` (pixels forced to target 0) when provided.
template <typename S>
LossResult<S> compute_loss(const Tensor4<S>& logits, const std::vector<BinaryMask>& targets, Supervision mode,
                           const std::vector<BinaryMask>* extra_negatives = nullptr, bool quiet = false)
{
    if (logits.c != 2) throw ShapeError("compute_loss: logits must have two channels");
    if (static_cast<int>(targets.size()) != logits.n) throw ShapeError("compute_loss: batch size mismatch");
    for (const auto& t : targets)
        if (t.rows() != logits.h || t.cols() != logits.w) throw ShapeError("compute_loss: target extent mismatch");
    if (extra_negatives) {
        if (extra_negatives->size() != targets.size()) throw ShapeError("compute_loss: negatives batch mismatch");
        for (const auto& t : *extra_negatives)
            if (t.rows() != logits.h || t.cols() != logits.w) throw ShapeError("compute_loss: negatives extent mismatch");
    }

    LossResult<S> out;
    out.grad = Tensor4<S>(logits.n, 2, logits.h, logits.w);
    const std::size_t plane = logits.plane();

    auto supervised = [&](int i, std::size_t k) -> bool {
        if (mode == Supervision::dense) return true;
        return targets[i].values()[k] == 1 || (extra_negatives && (*extra_negatives)[i].values()[k]);
    };
    auto target_of = [&](int i, std::size_t k) -> double { return targets[i].values()[k] == 1 ? 1.0 : 0.0; };

    // pass 1: probabilities and pooled sums
    std::vector<double> prob(logits.n * plane, 0.0);
    double ce = 0.0, sum_pg = 0.0, sum_p = 0.0, sum_g = 0.0;
    std::size_t count = 0;
    for (int i = 0; i < logits.n; ++i) {
        const S* z0 = logits.channel(i, 0);
        const S* z1 = logits.channel(i, 1);
        for (std::size_t k = 0; k < plane; ++k) {
            if (!supervised(i, k)) continue;
            const double d = double(z1[k]) - double(z0[k]);
            const double p = 1.0 / (1.0 + std::exp(-d));
            const double g = target_of(i, k);
            // -log p = softplus(-d), -log(1-p) = softplus(d)
            const double sp = g > 0.5 ? (d > 0 ? std::log1p(std::exp(-d)) : -d + std::log1p(std::exp(d)))
                                      : (d > 0 ? d + std::log1p(std::exp(-d)) : std::log1p(std::exp(d)));
            ce += sp;
            prob[i * plane + k] = p;
            sum_pg += p * g;
            sum_p += p;
            sum_g += g;
            ++count;
        }
    }
    out.supervised_pixels = count;
    if (count == 0) {
        if (mode == Supervision::point_positive_only && !quiet) log_warn("compute_loss: no supervised pixels, loss is 0");
        return out;
    }
    const double m = static_cast<double>(count);
    const double num = 2.0 * sum_pg + dice_smooth;
    const double den = sum_p + sum_g + dice_smooth;
    out.cross_entropy = ce / m;
    out.dice = num / den;
    out.value = out.cross_entropy + (1.0 - out.dice);

    // pass 2: gradient w.r.t. the two logits
    for (int i = 0; i < logits.n; ++i) {
        S* g0 = out.grad.channel(i, 0);
        S* g1 = out.grad.channel(i, 1);
        for (std::size_t k = 0; k < plane; ++k) {
            if (!supervised(i, k)) continue;
            const double p = prob[i * plane + k];
            const double g = target_of(i, k);
            const double dce = (p - g) / m;
            const double ddice_dp = (2.0 * g * den - num) / (den * den);
            const double d = dce - ddice_dp * p * (1.0 - p);
            g1[k] = static_cast<S>(d);
            g0[k] = static_cast<S>(-d);
        }
    }
    return out;
}

} // namespace nfanet
