// SPDX-License-Identifier: Apache-2.0
//
// Feature extractor interface and the bundled UNet.
//
// Every forward pass yields the segmentation logits and the activation that
// enters the final 1x1 classification convolution; the latter is what the
// aggregation stage consumes.

#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "layers.hpp"
#include "neighbor_sampler.hpp"
#include "tensor.hpp"

namespace nfanet {

struct NetworkConfig {
    int depth = 4;
    int base_channels = 16;
    int in_channels = 3;
    int out_classes = 2;
    std::uint64_t seed = 0;

    void validate() const
    {
        if (depth < 1) throw ConfigError("NetworkConfig: depth must be >= 1");
        if (base_channels < 1) throw ConfigError("NetworkConfig: base_channels must be >= 1");
        if (in_channels < 1) throw ConfigError("NetworkConfig: in_channels must be >= 1");
        if (out_classes != 2) throw ConfigError("NetworkConfig: only two output classes are supported");
    }
    /// Spatial extents must be multiples of this.
    int size_multiple() const noexcept { return 1 << (depth - 1); }
    int channels_at(int level) const noexcept { return base_channels << level; }
};

template <typename S>
struct ForwardOutput {
    Tensor4<S> logits;   ///< N x 2 x H x W
    Tensor4<S> features; ///< N x C_f x H x W
};

template <typename S>
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;

    /// Training-mode forward; keeps activations for backward().
    virtual ForwardOutput<S> forward(const Tensor4<S>& batch) = 0;
    /// Evaluation-mode forward; pure in (parameters, input).
    virtual ForwardOutput<S> infer(const Tensor4<S>& batch) const = 0;
    /// Accumulates parameter gradients for the last forward().
    virtual void backward(const Tensor4<S>& grad_logits) = 0;
    /// Drops cached activations.
    virtual void release() = 0;

    virtual std::vector<Param<S>*> parameters() = 0;
    virtual std::vector<Param<S>*> buffers() = 0;
    virtual const NetworkConfig& config() const = 0;
    virtual int feature_channels() const = 0;
    virtual std::unique_ptr<FeatureExtractor> clone() const = 0;

    std::size_t parameter_count()
    {
        std::size_t n = 0;
        for (auto* p : parameters()) n += p->size();
        return n;
    }
    void zero_grad()
    {
        for (auto* p : parameters()) p->zero_grad();
    }
};

template <typename S>
class UNet final : public FeatureExtractor<S> {
public:
    explicit UNet(const NetworkConfig& cfg) : cfg_(cfg)
    {
        cfg.validate();
        for (int i = 0; i < cfg.depth; ++i) {
            const int in = i == 0 ? cfg.in_channels : cfg.channels_at(i - 1);
            encoders_.emplace_back("enc" + std::to_string(i), in, cfg.channels_at(i));
        }
        for (int i = 0; i + 1 < cfg.depth; ++i)
            decoders_.emplace_back("dec" + std::to_string(i), cfg.channels_at(i) + cfg.channels_at(i + 1),
                                   cfg.channels_at(i));
        head_ = layers::Conv2d<S>("head", cfg.base_channels, cfg.out_classes, 1, true);

        std::mt19937_64 rng(cfg.seed);
        for (auto& e : encoders_) e.init(rng);
        for (auto& d : decoders_) d.init(rng);
        head_.init(rng);
    }

    ForwardOutput<S> forward(const Tensor4<S>& batch) override
    {
        check(batch);
        const int d = cfg_.depth;
        skips_.assign(d, {});
        argmax_.assign(d, {});
        skips_[0] = encoders_[0].forward(batch);
        for (int i = 1; i < d; ++i) skips_[i] = encoders_[i].forward(layers::maxpool2(skips_[i - 1], &argmax_[i - 1]));
        Tensor4<S> y = skips_[d - 1];
        for (int i = d - 2; i >= 0; --i) y = decoders_[i].forward(layers::concat(skips_[i], layers::upsample2(y)));
        ForwardOutput<S> out;
        out.logits = head_.forward(y);
        out.features = std::move(y);
        return out;
    }

    ForwardOutput<S> infer(const Tensor4<S>& batch) const override
    {
        check(batch);
        const int d = cfg_.depth;
        std::vector<Tensor4<S>> skips(d);
        skips[0] = encoders_[0].infer(batch);
        for (int i = 1; i < d; ++i) skips[i] = encoders_[i].infer(layers::maxpool2<S>(skips[i - 1], nullptr));
        Tensor4<S> y = skips[d - 1];
        for (int i = d - 2; i >= 0; --i) y = decoders_[i].infer(layers::concat(skips[i], layers::upsample2(y)));
        ForwardOutput<S> out;
        out.logits = head_.infer(y);
        out.features = std::move(y);
        return out;
    }

    void backward(const Tensor4<S>& grad_logits) override
    {
        const int d = cfg_.depth;
        if (skips_.empty()) throw ConfigError("UNet::backward called without a training forward pass");
        std::vector<Tensor4<S>> grad_skip(d);
        Tensor4<S> dy = head_.backward(grad_logits);
        for (int i = 0; i + 1 < d; ++i) {
            Tensor4<S> ds, du;
            layers::split(decoders_[i].backward(dy), cfg_.channels_at(i), ds, du);
            grad_skip[i] = std::move(ds);
            dy = layers::upsample2_backward(du);
        }
        grad_skip[d - 1] = std::move(dy);
        for (int i = d - 1; i >= 0; --i) {
            Tensor4<S> dx = encoders_[i].backward(grad_skip[i]);
            if (i > 0)
                layers::add_into(grad_skip[i - 1],
                                 layers::maxpool2_backward(dx, argmax_[i - 1], skips_[i - 1].h, skips_[i - 1].w));
        }
    }

    void release() override
    {
        skips_.clear();
        argmax_.clear();
        for (auto& e : encoders_) e.release();
        for (auto& dd : decoders_) dd.release();
        head_.release();
    }

    std::vector<Param<S>*> parameters() override
    {
        std::vector<Param<S>*> out;
        for (auto& e : encoders_) e.collect(out);
        for (auto& dd : decoders_) dd.collect(out);
        head_.collect(out);
        return out;
    }

    std::vector<Param<S>*> buffers() override
    {
        std::vector<Param<S>*> out;
        for (auto& e : encoders_) e.collect_buffers(out);
        for (auto& dd : decoders_) dd.collect_buffers(out);
        return out;
    }

    const NetworkConfig& config() const override { return cfg_; }
    int feature_channels() const override { return cfg_.base_channels; }
    std::unique_ptr<FeatureExtractor<S>> clone() const override
    {
        auto copy = std::make_unique<UNet>(*this);
        copy->release();
        return copy;
    }

private:
    void check(const Tensor4<S>& batch) const
    {
        if (batch.c != cfg_.in_channels)
            throw ShapeError("UNet: input has " + std::to_string(batch.c) + " channels, expected " +
                             std::to_string(cfg_.in_channels));
        const int m = cfg_.size_multiple();
        if (batch.h % m != 0 || batch.w % m != 0 || batch.h == 0 || batch.w == 0)
            throw ShapeError("UNet: spatial extent " + std::to_string(batch.h) + "x" + std::to_string(batch.w) +
                             " is not a positive multiple of " + std::to_string(m));
    }

    NetworkConfig cfg_;
    std::vector<layers::DoubleConv<S>> encoders_;
    std::vector<layers::DoubleConv<S>> decoders_;
    layers::Conv2d<S> head_;

    std::vector<Tensor4<S>> skips_;
    std::vector<std::vector<std::uint8_t>> argmax_;
};

using Network = UNet<float>;

template <typename S = float>
std::unique_ptr<FeatureExtractor<S>> build(const NetworkConfig& cfg)
{
    return std::make_unique<UNet<S>>(cfg);
}

// ---------------------------------------------------------------------------
// helpers over whole images / groups (evaluation mode)

/// Foreground probability softmax(logits)[1] for sample i.
template <typename S>
Grid<float> foreground_probability(const Tensor4<S>& logits, int i)
{
    Grid<float> p(logits.h, logits.w);
    const S* bg = logits.channel(i, 0);
    const S* fg = logits.channel(i, 1);
    for (std::size_t k = 0; k < p.size(); ++k)
        p.values()[k] = static_cast<float>(1.0 / (1.0 + std::exp(double(bg[k]) - double(fg[k]))));
    return p;
}

struct GroupOutput {
    FeatureStack features;
    std::vector<Grid<float>> probabilities; ///< per member foreground probability
};

template <typename S>
GroupOutput forward_group_full(const FeatureExtractor<S>& net, const NeighborGroup& group)
{
    if (group.members.empty()) throw ShapeError("forward_group: empty group");
    const auto out = net.infer(to_batch<S>(group.members));
    GroupOutput g;
    g.features = FeatureStack(out.features.h, out.features.w, out.features.c, group.size());
    for (int l = 0; l < group.size(); ++l) {
        for (int c = 0; c < out.features.c; ++c) {
            const S* src = out.features.channel(l, c);
            std::copy(src, src + out.features.plane(), g.features.plane(c, l));
        }
        g.probabilities.push_back(foreground_probability(out.logits, l));
    }
    return g;
}

template <typename S>
FeatureStack forward_group(const FeatureExtractor<S>& net, const NeighborGroup& group)
{
    return forward_group_full(net, group).features;
}

} // namespace nfanet
