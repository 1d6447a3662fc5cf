// SPDX-License-Identifier: Apache-2.0
//
// K x K neighbour resampling (space-to-depth without the depth stacking).
//
// The image is cut into (H/K) x (W/K) cells of K x K pixels. Member l
// (0-based here, n_{l+1} in the usual 1-based numbering) collects, from
// every cell, the pixel at in-cell offset (l / K, l % K):
//
//     member_l(i, j, c) = image(K*i + l/K, K*j + l%K, c)
//
// so members are ordered top-to-bottom, left-to-right inside a cell.
// sample() and reassemble() are exact inverses; no value is interpolated.

#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "core.hpp"

namespace nfanet {

struct SamplerConfig {
    int k = 2;

    int members() const noexcept { return k * k; }
    void validate() const
    {
        if (k < 1) throw ConfigError("SamplerConfig: K must be >= 1");
    }
};

struct NeighborGroup {
    std::vector<ImageTensor> members;
    int k = 1;
    std::array<int, 3> source_shape{0, 0, 0}; // H, W, C

    int size() const noexcept { return static_cast<int>(members.size()); }
};

namespace detail {

inline void check_divisible(int rows, int cols, int k, const char* where)
{
    if (rows % k != 0 || cols % k != 0)
        throw ShapeError(std::string(where) + ": extent " + std::to_string(rows) + "x" +
                         std::to_string(cols) + " is not divisible by K=" + std::to_string(k));
}

} // namespace detail

inline NeighborGroup sample(const ImageTensor& image, const SamplerConfig& cfg)
{
    cfg.validate();
    const int k = cfg.k;
    detail::check_divisible(image.height(), image.width(), k, "sample");
    const int h = image.height() / k, w = image.width() / k, ch = image.channels();

    NeighborGroup group;
    group.k = k;
    group.source_shape = {image.height(), image.width(), ch};
    group.members.reserve(cfg.members());
    for (int l = 0; l < cfg.members(); ++l) {
        const int dr = l / k, dc = l % k;
        ImageTensor m(h, w, ch);
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                for (int c = 0; c < ch; ++c) m(i, j, c) = image(k * i + dr, k * j + dc, c);
        group.members.push_back(std::move(m));
    }
    return group;
}

inline ImageTensor reassemble(const NeighborGroup& group)
{
    const int k = group.k;
    if (k < 1) throw ConfigError("reassemble: K must be >= 1");
    if (group.size() != k * k)
        throw ShapeError("reassemble: group has " + std::to_string(group.size()) + " members, expected K^2");
    const auto& first = group.members.front();
    for (const auto& m : group.members)
        if (!m.same_shape(first)) throw ShapeError("reassemble: members have inconsistent shapes");
    if (group.source_shape[0] != first.height() * k || group.source_shape[1] != first.width() * k ||
        group.source_shape[2] != first.channels())
        throw ShapeError("reassemble: source shape does not match member shape");

    ImageTensor out(first.height() * k, first.width() * k, first.channels());
    for (int l = 0; l < group.size(); ++l) {
        const int dr = l / k, dc = l % k;
        const auto& m = group.members[l];
        for (int i = 0; i < m.height(); ++i)
            for (int j = 0; j < m.width(); ++j)
                for (int c = 0; c < m.channels(); ++c) out(k * i + dr, k * j + dc, c) = m(i, j, c);
    }
    return out;
}

/// Same indexing as sample(), for any single-channel grid (masks, maps).
template <typename T>
std::vector<Grid<T>> sample_grid(const Grid<T>& g, const SamplerConfig& cfg)
{
    cfg.validate();
    const int k = cfg.k;
    detail::check_divisible(g.rows(), g.cols(), k, "sample_mask");
    std::vector<Grid<T>> out;
    out.reserve(cfg.members());
    for (int l = 0; l < cfg.members(); ++l) {
        const int dr = l / k, dc = l % k;
        Grid<T> m(g.rows() / k, g.cols() / k);
        for (int i = 0; i < m.rows(); ++i)
            for (int j = 0; j < m.cols(); ++j) m(i, j) = g(k * i + dr, k * j + dc);
        out.push_back(std::move(m));
    }
    return out;
}

template <typename T>
Grid<T> reassemble_grid(const std::vector<Grid<T>>& members, int k)
{
    if (k < 1) throw ConfigError("reassemble: K must be >= 1");
    if (static_cast<int>(members.size()) != k * k) throw ShapeError("reassemble: expected K^2 members");
    for (const auto& m : members)
        if (!m.same_shape(members.front())) throw ShapeError("reassemble: members have inconsistent shapes");
    Grid<T> out(members.front().rows() * k, members.front().cols() * k);
    for (int l = 0; l < k * k; ++l)
        for (int i = 0; i < members[l].rows(); ++i)
            for (int j = 0; j < members[l].cols(); ++j) out(k * i + l / k, k * j + l % k) = members[l](i, j);
    return out;
}

inline std::vector<BinaryMask> sample_mask(const BinaryMask& mask, const SamplerConfig& cfg)
{
    require_binary(mask, "sample_mask");
    return sample_grid(mask, cfg);
}

/// Mean absolute difference over all member pairs and pixels. A diagnostic
/// only: constant regions contribute zero.
inline double neighbor_similarity(const NeighborGroup& group)
{
    if (group.size() < 2) return 0.0;
    double total = 0.0;
    std::size_t n = 0;
    for (int a = 0; a < group.size(); ++a)
        for (int b = a + 1; b < group.size(); ++b) {
            const auto& x = group.members[a].values();
            const auto& y = group.members[b].values();
            for (std::size_t i = 0; i < x.size(); ++i) total += std::abs(double(x[i]) - double(y[i]));
            n += x.size();
        }
    return n ? total / static_cast<double>(n) : 0.0;
}

} // namespace nfanet
