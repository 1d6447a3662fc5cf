// SPDX-License-Identifier: Apache-2.0
//
// The handful of layers a UNet needs, each with an explicit backward pass.
// Layers keep the activations of the last training forward pass; inference
// goes through the const `infer` paths and touches no cache.

#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tensor.hpp"

namespace nfanet::layers {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

// col has shape (C*k*k) x (H*W); zero padding of k/2 on every side.
template <typename S>
void im2col(const S* x, int channels, int h, int w, int k, S* col)
{
    const int pad = k / 2;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int ch = 0; ch < channels; ++ch)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                S* row = col + ((static_cast<std::size_t>(ch) * k + ky) * k + kx) * hw;
                const S* src = x + ch * hw;
                const int dy = ky - pad, dx = kx - pad;
                const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                for (int y = 0; y < h; ++y) {
                    S* dst = row + static_cast<std::size_t>(y) * w;
                    const int sy = y + dy;
                    if (sy < 0 || sy >= h) {
                        std::fill(dst, dst + w, S{0});
                        continue;
                    }
                    std::fill(dst, dst + x0, S{0});
                    const S* s = src + static_cast<std::size_t>(sy) * w + dx;
                    for (int xx = x0; xx < x1; ++xx) dst[xx] = s[xx];
                    std::fill(dst + x1, dst + w, S{0});
                }
            }
}

template <typename S>
void col2im(const S* col, int channels, int h, int w, int k, S* x)
{
    const int pad = k / 2;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    std::fill(x, x + channels * hw, S{0});
    for (int ch = 0; ch < channels; ++ch)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const S* row = col + ((static_cast<std::size_t>(ch) * k + ky) * k + kx) * hw;
                S* dst = x + ch * hw;
                const int dy = ky - pad, dx = kx - pad;
                const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                for (int y = 0; y < h; ++y) {
                    const int sy = y + dy;
                    if (sy < 0 || sy >= h) continue;
                    const S* s = row + static_cast<std::size_t>(y) * w;
                    S* d = dst + static_cast<std::size_t>(sy) * w + dx;
                    for (int xx = x0; xx < x1; ++xx) d[xx] += s[xx];
                }
            }
}

} // namespace detail

/// Square convolution, stride 1, "same" zero padding.
template <typename S>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(std::string name, int in, int out, int k, bool bias)
        : in_(in), out_(out), k_(k), weight_(name + ".weight", {out, in, k, k})
    {
        if (bias) bias_ = Param<S>(name + ".bias", {out});
    }

    void init(std::mt19937_64& rng)
    {
        // He-normal over fan-in
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (in_ * k_ * k_)));
        for (auto& v : weight_.value) v = static_cast<S>(dist(rng));
        std::fill(bias_.value.begin(), bias_.value.end(), S{0});
    }

    Tensor4<S> infer(const Tensor4<S>& x) const
    {
        Tensor4<S> y(x.n, out_, x.h, x.w);
        Buffer<S> col;
        for (int i = 0; i < x.n; ++i) forward_sample(x.sample(i), x.h, x.w, y.sample(i), col);
        return y;
    }

    Tensor4<S> forward(const Tensor4<S>& x)
    {
        input_ = x;
        return infer(x);
    }

    Tensor4<S> backward(const Tensor4<S>& dy)
    {
        const auto& x = input_;
        Tensor4<S> dx(x.n, in_, x.h, x.w);
        const int hw = x.h * x.w, kk = in_ * k_ * k_;
        Buffer<S> col, dcol(static_cast<std::size_t>(kk) * hw);
        Eigen::Map<RowMat<S>> dw(weight_.grad.data(), out_, kk);
        Eigen::Map<const RowMat<S>> wmat(weight_.value.data(), out_, kk);
        for (int i = 0; i < x.n; ++i) {
            const S* colp = columns(x.sample(i), x.h, x.w, col);
            Eigen::Map<const RowMat<S>> c(colp, kk, hw);
            Eigen::Map<const RowMat<S>> g(dy.sample(i), out_, hw);
            dw.noalias() += g * c.transpose();
            if (!bias_.value.empty())
                for (int o = 0; o < out_; ++o) {
                    // fixed-order reduction; Eigen's sum() would vectorise by alignment
                    const S* row = dy.sample(i) + static_cast<std::size_t>(o) * hw;
                    S acc{0};
                    for (int p = 0; p < hw; ++p) acc += row[p];
                    bias_.grad[o] += acc;
                }
            if (k_ == 1) {
                Eigen::Map<RowMat<S>> d(dx.sample(i), kk, hw);
                d.noalias() = wmat.transpose() * g;
            } else {
                Eigen::Map<RowMat<S>> d(dcol.data(), kk, hw);
                d.noalias() = wmat.transpose() * g;
                detail::col2im(dcol.data(), in_, x.h, x.w, k_, dx.sample(i));
            }
        }
        return dx;
    }

    void collect(std::vector<Param<S>*>& out)
    {
        out.push_back(&weight_);
        if (!bias_.value.empty()) out.push_back(&bias_);
    }
    void release() { input_ = {}; }

private:
    const S* columns(const S* x, int h, int w, Buffer<S>& col) const
    {
        if (k_ == 1) return x;
        col.resize(static_cast<std::size_t>(in_) * k_ * k_ * h * w);
        detail::im2col(x, in_, h, w, k_, col.data());
        return col.data();
    }

    void forward_sample(const S* x, int h, int w, S* y, Buffer<S>& col) const
    {
        const int hw = h * w, kk = in_ * k_ * k_;
        const S* colp = columns(x, h, w, col);
        Eigen::Map<const RowMat<S>> wmat(weight_.value.data(), out_, kk);
        Eigen::Map<const RowMat<S>> c(colp, kk, hw);
        Eigen::Map<RowMat<S>> out(y, out_, hw);
        out.noalias() = wmat * c;
        if (!bias_.value.empty())
            for (int o = 0; o < out_; ++o) out.row(o).array() += bias_.value[o];
    }

    int in_ = 0, out_ = 0, k_ = 3;
    Param<S> weight_;
    Param<S> bias_;
    Tensor4<S> input_;
};

/// Batch normalisation followed by ReLU.
template <typename S>
class BatchNormRelu {
public:
    BatchNormRelu() = default;
    BatchNormRelu(const std::string& name, int channels)
        : channels_(channels),
          gamma_(name + ".gamma", {channels}, S{1}),
          beta_(name + ".beta", {channels}, S{0}),
          running_mean_(name + ".running_mean", {channels}, S{0}),
          running_var_(name + ".running_var", {channels}, S{1})
    {
    }

    static constexpr double eps = 1e-5;
    static constexpr double momentum = 0.1;

    Tensor4<S> infer(const Tensor4<S>& x) const
    {
        Tensor4<S> y(x.n, x.c, x.h, x.w);
        const std::size_t plane = x.plane();
        for (int ch = 0; ch < channels_; ++ch) {
            const S scale = static_cast<S>(gamma_.value[ch] / std::sqrt(double(running_var_.value[ch]) + eps));
            const S shift = beta_.value[ch] - scale * running_mean_.value[ch];
            for (int i = 0; i < x.n; ++i) {
                const S* src = x.channel(i, ch);
                S* dst = y.channel(i, ch);
                for (std::size_t p = 0; p < plane; ++p) dst[p] = std::max(S{0}, scale * src[p] + shift);
            }
        }
        return y;
    }

    Tensor4<S> forward(const Tensor4<S>& x)
    {
        xhat_ = Tensor4<S>(x.n, x.c, x.h, x.w);
        out_ = Tensor4<S>(x.n, x.c, x.h, x.w);
        inv_std_.assign(channels_, S{0});
        const std::size_t plane = x.plane();
        const double m = static_cast<double>(x.n) * plane;
        for (int ch = 0; ch < channels_; ++ch) {
            double sum = 0.0;
            for (int i = 0; i < x.n; ++i) {
                const S* src = x.channel(i, ch);
                for (std::size_t p = 0; p < plane; ++p) sum += src[p];
            }
            const double mean = sum / m;
            double sq = 0.0;
            for (int i = 0; i < x.n; ++i) {
                const S* src = x.channel(i, ch);
                for (std::size_t p = 0; p < plane; ++p) sq += (src[p] - mean) * (src[p] - mean);
            }
            const double var = sq / m;
            const double inv = 1.0 / std::sqrt(var + eps);
            inv_std_[ch] = static_cast<S>(inv);
            const S g = gamma_.value[ch], b = beta_.value[ch];
            for (int i = 0; i < x.n; ++i) {
                const S* src = x.channel(i, ch);
                S* xh = xhat_.channel(i, ch);
                S* dst = out_.channel(i, ch);
                for (std::size_t p = 0; p < plane; ++p) {
                    xh[p] = static_cast<S>((src[p] - mean) * inv);
                    dst[p] = std::max(S{0}, g * xh[p] + b);
                }
            }
            running_mean_.value[ch] = static_cast<S>((1 - momentum) * running_mean_.value[ch] + momentum * mean);
            const double unbiased = m > 1 ? var * m / (m - 1) : var;
            running_var_.value[ch] = static_cast<S>((1 - momentum) * running_var_.value[ch] + momentum * unbiased);
        }
        return out_;
    }

    Tensor4<S> backward(const Tensor4<S>& dy)
    {
        Tensor4<S> dx(dy.n, dy.c, dy.h, dy.w);
        const std::size_t plane = dy.plane();
        const double m = static_cast<double>(dy.n) * plane;
        std::vector<S> dxh(plane);
        for (int ch = 0; ch < channels_; ++ch) {
            double sum_d = 0.0, sum_dx = 0.0;
            const S g = gamma_.value[ch];
            for (int i = 0; i < dy.n; ++i) {
                const S* d = dy.channel(i, ch);
                const S* o = out_.channel(i, ch);
                const S* xh = xhat_.channel(i, ch);
                for (std::size_t p = 0; p < plane; ++p) {
                    const S dr = o[p] > S{0} ? d[p] : S{0};
                    gamma_.grad[ch] += dr * xh[p];
                    beta_.grad[ch] += dr;
                    sum_d += dr * g;
                    sum_dx += dr * g * xh[p];
                }
            }
            const double inv = inv_std_[ch];
            for (int i = 0; i < dy.n; ++i) {
                const S* d = dy.channel(i, ch);
                const S* o = out_.channel(i, ch);
                const S* xh = xhat_.channel(i, ch);
                S* dst = dx.channel(i, ch);
                for (std::size_t p = 0; p < plane; ++p) {
                    const double dxhat = (o[p] > S{0} ? d[p] : S{0}) * g;
                    dst[p] = static_cast<S>(inv / m * (m * dxhat - sum_d - xh[p] * sum_dx));
                }
            }
        }
        return dx;
    }

    void collect(std::vector<Param<S>*>& out)
    {
        out.push_back(&gamma_);
        out.push_back(&beta_);
    }
    void collect_buffers(std::vector<Param<S>*>& out)
    {
        out.push_back(&running_mean_);
        out.push_back(&running_var_);
    }
    void release()
    {
        xhat_ = {};
        out_ = {};
    }

private:
    int channels_ = 0;
    Param<S> gamma_, beta_, running_mean_, running_var_;
    Tensor4<S> xhat_, out_;
    std::vector<S> inv_std_;
};

/// conv3x3 -> BN -> ReLU, twice.
template <typename S>
class DoubleConv {
public:
    DoubleConv() = default;
    DoubleConv(const std::string& name, int in, int out)
        : conv1_(name + ".conv1", in, out, 3, false),
          bn1_(name + ".bn1", out),
          conv2_(name + ".conv2", out, out, 3, false),
          bn2_(name + ".bn2", out)
    {
    }

    void init(std::mt19937_64& rng)
    {
        conv1_.init(rng);
        conv2_.init(rng);
    }
    Tensor4<S> infer(const Tensor4<S>& x) const { return bn2_.infer(conv2_.infer(bn1_.infer(conv1_.infer(x)))); }
    Tensor4<S> forward(const Tensor4<S>& x) { return bn2_.forward(conv2_.forward(bn1_.forward(conv1_.forward(x)))); }
    Tensor4<S> backward(const Tensor4<S>& dy)
    {
        return conv1_.backward(bn1_.backward(conv2_.backward(bn2_.backward(dy))));
    }
    void collect(std::vector<Param<S>*>& out)
    {
        conv1_.collect(out);
        bn1_.collect(out);
        conv2_.collect(out);
        bn2_.collect(out);
    }
    void collect_buffers(std::vector<Param<S>*>& out)
    {
        bn1_.collect_buffers(out);
        bn2_.collect_buffers(out);
    }
    void release()
    {
        conv1_.release();
        bn1_.release();
        conv2_.release();
        bn2_.release();
    }

private:
    Conv2d<S> conv1_;
    BatchNormRelu<S> bn1_;
    Conv2d<S> conv2_;
    BatchNormRelu<S> bn2_;
};

// ---------------------------------------------------------------------------
// parameter-free helpers

/// 2x2 max pooling, stride 2. `argmax` receives the winning offset (0..3).
template <typename S>
Tensor4<S> maxpool2(const Tensor4<S>& x, std::vector<std::uint8_t>* argmax)
{
    Tensor4<S> y(x.n, x.c, x.h / 2, x.w / 2);
    if (argmax) argmax->assign(y.size(), 0);
    std::size_t o = 0;
    for (int i = 0; i < x.n; ++i)
        for (int ch = 0; ch < x.c; ++ch) {
            const S* src = x.channel(i, ch);
            for (int yy = 0; yy < y.h; ++yy)
                for (int xx = 0; xx < y.w; ++xx, ++o) {
                    const S* p = src + static_cast<std::size_t>(2 * yy) * x.w + 2 * xx;
                    S best = p[0];
                    std::uint8_t arg = 0;
                    if (p[1] > best) best = p[1], arg = 1;
                    if (p[x.w] > best) best = p[x.w], arg = 2;
                    if (p[x.w + 1] > best) best = p[x.w + 1], arg = 3;
                    y.data[o] = best;
                    if (argmax) (*argmax)[o] = arg;
                }
        }
    return y;
}

template <typename S>
Tensor4<S> maxpool2_backward(const Tensor4<S>& dy, const std::vector<std::uint8_t>& argmax, int h, int w)
{
    Tensor4<S> dx(dy.n, dy.c, h, w);
    std::size_t o = 0;
    for (int i = 0; i < dy.n; ++i)
        for (int ch = 0; ch < dy.c; ++ch) {
            S* dst = dx.channel(i, ch);
            for (int yy = 0; yy < dy.h; ++yy)
                for (int xx = 0; xx < dy.w; ++xx, ++o) {
                    const int a = argmax[o];
                    dst[static_cast<std::size_t>(2 * yy + a / 2) * w + 2 * xx + a % 2] = dy.data[o];
                }
        }
    return dx;
}

/// Nearest-neighbour x2 upsampling.
template <typename S>
Tensor4<S> upsample2(const Tensor4<S>& x)
{
    Tensor4<S> y(x.n, x.c, x.h * 2, x.w * 2);
    for (int i = 0; i < x.n; ++i)
        for (int ch = 0; ch < x.c; ++ch) {
            const S* src = x.channel(i, ch);
            S* dst = y.channel(i, ch);
            for (int yy = 0; yy < y.h; ++yy)
                for (int xx = 0; xx < y.w; ++xx)
                    dst[static_cast<std::size_t>(yy) * y.w + xx] = src[static_cast<std::size_t>(yy / 2) * x.w + xx / 2];
        }
    return y;
}

template <typename S>
Tensor4<S> upsample2_backward(const Tensor4<S>& dy)
{
    Tensor4<S> dx(dy.n, dy.c, dy.h / 2, dy.w / 2);
    for (int i = 0; i < dy.n; ++i)
        for (int ch = 0; ch < dy.c; ++ch) {
            const S* src = dy.channel(i, ch);
            S* dst = dx.channel(i, ch);
            for (int yy = 0; yy < dy.h; ++yy)
                for (int xx = 0; xx < dy.w; ++xx)
                    dst[static_cast<std::size_t>(yy / 2) * dx.w + xx / 2] += src[static_cast<std::size_t>(yy) * dy.w + xx];
        }
    return dx;
}

/// Channel concatenation [a, b].
template <typename S>
Tensor4<S> concat(const Tensor4<S>& a, const Tensor4<S>& b)
{
    Tensor4<S> y(a.n, a.c + b.c, a.h, a.w);
    for (int i = 0; i < a.n; ++i) {
        std::copy(a.sample(i), a.sample(i) + a.sample_size(), y.sample(i));
        std::copy(b.sample(i), b.sample(i) + b.sample_size(), y.sample(i) + a.sample_size());
    }
    return y;
}

template <typename S>
void split(const Tensor4<S>& dy, int channels_a, Tensor4<S>& da, Tensor4<S>& db)
{
    da = Tensor4<S>(dy.n, channels_a, dy.h, dy.w);
    db = Tensor4<S>(dy.n, dy.c - channels_a, dy.h, dy.w);
    for (int i = 0; i < dy.n; ++i) {
        std::copy(dy.sample(i), dy.sample(i) + da.sample_size(), da.sample(i));
        std::copy(dy.sample(i) + da.sample_size(), dy.sample(i) + dy.sample_size(), db.sample(i));
    }
}

template <typename S>
void add_into(Tensor4<S>& acc, const Tensor4<S>& x)
{
    for (std::size_t i = 0; i < acc.size(); ++i) acc.data[i] += x.data[i];
}

} // namespace nfanet::layers
