// SPDX-License-Identifier: Apache-2.0
//
// Mask clean-up and the point-label constraint that turns a voted mask into
// a pseudo-label.

#pragma once

#include <cmath>
#include <deque>
#include <vector>

#include "core.hpp"
#include "points.hpp"

namespace nfanet {

struct MorphConfig {
    int open_radius = 1;
    /// Enclosed background regions up to this many pixels are filled.
    long max_hole_area = 64;
    /// Foreground connectivity; background uses the complementary one.
    int connectivity = 8;

    void validate() const
    {
        if (open_radius < 0) throw ConfigError("MorphConfig: open_radius must be >= 0");
        if (max_hole_area < 0) throw ConfigError("MorphConfig: max_hole_area must be >= 0");
        if (connectivity != 4 && connectivity != 8) throw ConfigError("MorphConfig: connectivity must be 4 or 8");
    }

    /// Defaults calibrated for 492 x 492 tiles, hole area scaled by pixel count.
    static MorphConfig scaled_for(int rows, int cols)
    {
        MorphConfig cfg;
        const double scale = static_cast<double>(rows) * cols / (492.0 * 492.0);
        cfg.max_hole_area = std::max(1L, std::lround(64.0 * scale));
        return cfg;
    }
};

struct PseudoLabel {
    BinaryMask mask;
    int round = 0;
    int kept_components = 0;
    int dropped_components = 0;
};

// ---------------------------------------------------------------------------
// connected components

struct Components {
    Grid<int> labels; ///< -1 outside the selected value, else component id
    std::vector<long> areas;
    std::vector<bool> touches_border;

    int count() const noexcept { return static_cast<int>(areas.size()); }
};

/// Label the connected regions of pixels equal to `value`.
inline Components label_components(const BinaryMask& mask, int connectivity, std::uint8_t value = 1)
{
    if (connectivity != 4 && connectivity != 8) throw ConfigError("connectivity must be 4 or 8");
    static constexpr int dr[8] = {-1, 1, 0, 0, -1, -1, 1, 1};
    static constexpr int dc[8] = {0, 0, -1, 1, -1, 1, -1, 1};

    Components out;
    out.labels = Grid<int>(mask.rows(), mask.cols(), -1);
    std::deque<std::pair<int, int>> queue;
    for (int r = 0; r < mask.rows(); ++r)
        for (int c = 0; c < mask.cols(); ++c) {
            if (mask(r, c) != value || out.labels(r, c) >= 0) continue;
            const int id = out.count();
            out.areas.push_back(0);
            out.touches_border.push_back(false);
            out.labels(r, c) = id;
            queue.emplace_back(r, c);
            while (!queue.empty()) {
                auto [y, x] = queue.front();
                queue.pop_front();
                ++out.areas[id];
                if (y == 0 || x == 0 || y == mask.rows() - 1 || x == mask.cols() - 1)
                    out.touches_border[id] = true;
                for (int n = 0; n < connectivity; ++n) {
                    const int ny = y + dr[n], nx = x + dc[n];
                    if (!mask.contains(ny, nx) || mask(ny, nx) != value || out.labels(ny, nx) >= 0) continue;
                    out.labels(ny, nx) = id;
                    queue.emplace_back(ny, nx);
                }
            }
        }
    return out;
}

// ---------------------------------------------------------------------------

inline BinaryMask fill_holes(const BinaryMask& mask, const MorphConfig& cfg)
{
    cfg.validate();
    require_binary(mask, "fill_holes");
    const int bg_conn = cfg.connectivity == 8 ? 4 : 8;
    const auto holes = label_components(mask, bg_conn, 0);
    BinaryMask out = mask;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const int id = holes.labels.values()[i];
        if (id >= 0 && !holes.touches_border[id] && holes.areas[id] <= cfg.max_hole_area) out.values()[i] = 1;
    }
    return out;
}

namespace detail {

/// Separable square min/max filter; windows are clipped to the image.
inline BinaryMask square_filter(const BinaryMask& in, int radius, bool take_min)
{
    BinaryMask tmp(in.rows(), in.cols()), out(in.rows(), in.cols());
    const std::uint8_t init = take_min ? 1 : 0;
    for (int r = 0; r < in.rows(); ++r)
        for (int c = 0; c < in.cols(); ++c) {
            std::uint8_t v = init;
            for (int x = std::max(0, c - radius); x <= std::min(in.cols() - 1, c + radius); ++x)
                v = take_min ? std::min(v, in(r, x)) : std::max(v, in(r, x));
            tmp(r, c) = v;
        }
    for (int r = 0; r < in.rows(); ++r)
        for (int c = 0; c < in.cols(); ++c) {
            std::uint8_t v = init;
            for (int y = std::max(0, r - radius); y <= std::min(in.rows() - 1, r + radius); ++y)
                v = take_min ? std::min(v, tmp(y, c)) : std::max(v, tmp(y, c));
            out(r, c) = v;
        }
    return out;
}

} // namespace detail

inline BinaryMask erode(const BinaryMask& mask, int radius) { return detail::square_filter(mask, radius, true); }
inline BinaryMask dilate(const BinaryMask& mask, int radius) { return detail::square_filter(mask, radius, false); }

/// Opening with a (2r+1) x (2r+1) square. Pixels outside the image are
/// ignored, so foreground touching the border is not eroded by it.
inline BinaryMask morph_open(const BinaryMask& mask, const MorphConfig& cfg)
{
    cfg.validate();
    require_binary(mask, "morph_open");
    if (cfg.open_radius == 0) return mask;
    return dilate(erode(mask, cfg.open_radius), cfg.open_radius);
}

/// Keep the foreground components that overlap the point mask.
inline PseudoLabel apply_point_constraint(const BinaryMask& mask, const BinaryMask& point_mask, int connectivity = 8)
{
    require_binary(mask, "apply_point_constraint");
    if (!mask.same_shape(point_mask)) throw ShapeError("apply_point_constraint: point mask extent differs");
    PseudoLabel out;
    out.mask = BinaryMask(mask.rows(), mask.cols(), 0);
    if (count_foreground(point_mask) == 0) {
        log_warn("apply_point_constraint: no point labels, pseudo-label is empty");
        return out;
    }
    const auto comps = label_components(mask, connectivity, 1);
    std::vector<bool> keep(comps.count(), false);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        const int id = comps.labels.values()[i];
        if (id >= 0 && point_mask.values()[i]) keep[id] = true;
    }
    for (std::size_t i = 0; i < mask.size(); ++i) {
        const int id = comps.labels.values()[i];
        if (id >= 0 && keep[id]) out.mask.values()[i] = 1;
    }
    for (bool k : keep) (k ? out.kept_components : out.dropped_components)++;
    return out;
}

inline PseudoLabel apply_point_constraint(const BinaryMask& mask, const PointLabelSet& points, int connectivity = 8)
{
    return apply_point_constraint(mask, rasterize(points, mask.rows(), mask.cols()), connectivity);
}

/// fill_holes -> morph_open -> apply_point_constraint
inline PseudoLabel postprocess(const BinaryMask& mask, const BinaryMask& point_mask, const MorphConfig& cfg)
{
    const auto filled = fill_holes(mask, cfg);
    const auto opened = morph_open(filled, cfg);
    return apply_point_constraint(opened, point_mask, cfg.connectivity);
}

inline PseudoLabel postprocess(const BinaryMask& mask, const PointLabelSet& points, const MorphConfig& cfg)
{
    return postprocess(mask, rasterize(points, mask.rows(), mask.cols()), cfg);
}

} // namespace nfanet
