// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <optional>

#include "core.hpp"
#include "points.hpp"

namespace nfanet {

/// Foreground pixels with at least one in-image 4-neighbour in background.
inline BinaryMask boundary(const BinaryMask& m)
{
    BinaryMask out(m.rows(), m.cols(), 0);
    static constexpr int dr[4] = {-1, 1, 0, 0};
    static constexpr int dc[4] = {0, 0, -1, 1};
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c) {
            if (!m(r, c)) continue;
            for (int n = 0; n < 4; ++n)
                if (m.contains(r + dr[n], c + dc[n]) && !m(r + dr[n], c + dc[n])) {
                    out(r, c) = 1;
                    break;
                }
        }
    return out;
}

struct Overlay {
    ImageTensor rgb;
    BinaryMask pred_boundary;
    BinaryMask gt_boundary;
};

inline constexpr std::array<float, 3> pred_color{1.f, 0.f, 0.f};
inline constexpr std::array<float, 3> gt_color{0.f, 1.f, 0.f};
inline constexpr std::array<float, 3> both_color{1.f, 1.f, 0.f};
inline constexpr std::array<float, 3> point_color{0.f, 0.4f, 1.f};

/// Dimmed image with point-square outlines, then ground-truth (green),
/// prediction (red) and shared (yellow) boundary pixels on top.
inline Overlay visualize(const ImageTensor& image, const BinaryMask& pred, const std::optional<BinaryMask>& gt = std::nullopt,
                         const std::optional<PointLabelSet>& points = std::nullopt)
{
    if (pred.rows() != image.height() || pred.cols() != image.width()) throw ShapeError("visualize: prediction extent differs");
    if (gt && !gt->same_shape(pred)) throw ShapeError("visualize: ground truth extent differs");

    Overlay ov;
    ov.rgb = ImageTensor(image.height(), image.width(), 3);
    for (int r = 0; r < image.height(); ++r)
        for (int c = 0; c < image.width(); ++c)
            for (int ch = 0; ch < 3; ++ch) ov.rgb(r, c, ch) = 0.6f * image(r, c, image.channels() == 3 ? ch : 0);

    auto paint = [&](int r, int c, const std::array<float, 3>& col) {
        for (int ch = 0; ch < 3; ++ch) ov.rgb(r, c, ch) = col[ch];
    };
    if (points)
        for (const auto& p : points->points)
            for (int r = p.top(); r < p.top() + p.side; ++r)
                for (int c = p.left(); c < p.left() + p.side; ++c) {
                    const bool edge = r == p.top() || c == p.left() || r == p.top() + p.side - 1 || c == p.left() + p.side - 1;
                    if (edge && pred.contains(r, c)) paint(r, c, point_color);
                }

    ov.pred_boundary = boundary(pred);
    ov.gt_boundary = gt ? boundary(*gt) : BinaryMask(pred.rows(), pred.cols(), 0);
    for (int r = 0; r < pred.rows(); ++r)
        for (int c = 0; c < pred.cols(); ++c) {
            const bool p = ov.pred_boundary(r, c), g = ov.gt_boundary(r, c);
            if (p && g) paint(r, c, both_color);
            else if (p) paint(r, c, pred_color);
            else if (g) paint(r, c, gt_color);
        }
    return ov;
}

} // namespace nfanet
