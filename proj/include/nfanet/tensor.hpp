// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <new>
#include <string>
#include <vector>

#include "core.hpp"

namespace nfanet {

/// Vectorised Eigen kernels pick their summation order from the address
/// alignment of their operands, so buffers that reach Eigen are always
/// allocated on a fixed boundary. Otherwise the same computation can round
/// differently depending on heap state, and seeded runs drift apart.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() noexcept = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept
    {
    }

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept
    {
        return true;
    }
};

template <typename S>
using Buffer = std::vector<S, AlignedAllocator<S>>;

/// Dense N x C x H x W batch used inside the network.
template <typename S>
struct Tensor4 {
    int n = 0, c = 0, h = 0, w = 0;
    Buffer<S> data;

    Tensor4() = default;
    Tensor4(int n_, int c_, int h_, int w_, S fill = S{0}) : n(n_), c(c_), h(h_), w(w_)
    {
        data.assign(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill);
    }

    std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }
    std::size_t sample_size() const noexcept { return c * plane(); }
    std::size_t size() const noexcept { return data.size(); }

    S* sample(int i) noexcept { return data.data() + i * sample_size(); }
    const S* sample(int i) const noexcept { return data.data() + i * sample_size(); }
    S* channel(int i, int ch) noexcept { return sample(i) + ch * plane(); }
    const S* channel(int i, int ch) const noexcept { return sample(i) + ch * plane(); }

    S& at(int i, int ch, int y, int x) noexcept { return channel(i, ch)[static_cast<std::size_t>(y) * w + x]; }
    S at(int i, int ch, int y, int x) const noexcept { return channel(i, ch)[static_cast<std::size_t>(y) * w + x]; }

    bool same_shape(const Tensor4& o) const noexcept { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

/// Pack HWC images into an NCHW batch.
template <typename S>
Tensor4<S> to_batch(const std::vector<const ImageTensor*>& images)
{
    if (images.empty()) throw ShapeError("to_batch: empty batch");
    const auto& f = *images.front();
    Tensor4<S> t(static_cast<int>(images.size()), f.channels(), f.height(), f.width());
    for (int i = 0; i < t.n; ++i) {
        const auto& img = *images[i];
        if (!img.same_shape(f)) throw ShapeError("to_batch: images differ in shape");
        for (int y = 0; y < t.h; ++y)
            for (int x = 0; x < t.w; ++x)
                for (int ch = 0; ch < t.c; ++ch) t.at(i, ch, y, x) = static_cast<S>(img(y, x, ch));
    }
    return t;
}

template <typename S>
Tensor4<S> to_batch(const std::vector<ImageTensor>& images)
{
    std::vector<const ImageTensor*> ptrs;
    for (const auto& i : images) ptrs.push_back(&i);
    return to_batch<S>(ptrs);
}

/// A named learnable (or buffer) tensor with its gradient.
template <typename S>
struct Param {
    std::string name;
    std::vector<int> shape;
    Buffer<S> value;
    Buffer<S> grad;

    Param() = default;
    Param(std::string name_, std::vector<int> shape_, S fill = S{0}) : name(std::move(name_)), shape(std::move(shape_))
    {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        value.assign(n, fill);
        grad.assign(n, S{0});
    }
    std::size_t size() const noexcept { return value.size(); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), S{0}); }
};

} // namespace nfanet
