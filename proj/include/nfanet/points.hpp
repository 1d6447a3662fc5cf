// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "core.hpp"

namespace nfanet {

inline constexpr int point_side = 5;

/// A side x side square of known-water pixels centred at (row, col).
struct PointLabel {
    int row = 0;
    int col = 0;
    int side = point_side;
    /// Set when the owning component was too thin to hold the whole square.
    bool fallback = false;

    int top() const noexcept { return row - side / 2; }
    int left() const noexcept { return col - side / 2; }

    friend bool operator==(const PointLabel& a, const PointLabel& b)
    {
        return a.row == b.row && a.col == b.col && a.side == b.side;
    }
};

struct PointLabelSet {
    std::string image_id;
    std::vector<PointLabel> points;

    bool empty() const noexcept { return points.empty(); }

    void validate(int rows, int cols) const
    {
        for (const auto& p : points) {
            if (p.side < 1) throw DataError("PointLabelSet: side must be positive");
            if (p.top() < 0 || p.left() < 0 || p.top() + p.side > rows || p.left() + p.side > cols)
                throw DataError("PointLabelSet: point square at (" + std::to_string(p.row) + "," +
                                std::to_string(p.col) + ") leaves the image");
        }
    }
};

/// Rasterise all point squares into a rows x cols mask (clipped to bounds).
inline BinaryMask rasterize(const PointLabelSet& points, int rows, int cols)
{
    BinaryMask m(rows, cols, 0);
    for (const auto& p : points.points)
        for (int r = p.top(); r < p.top() + p.side; ++r)
            for (int c = p.left(); c < p.left() + p.side; ++c)
                if (m.contains(r, c)) m(r, c) = 1;
    return m;
}

/// Cell-wise OR reduction of a full-resolution mask by factor k; maps point
/// squares onto neighbour resolution.
inline BinaryMask downsample_any(const BinaryMask& m, int k)
{
    if (k < 1 || m.rows() % k || m.cols() % k) throw ShapeError("downsample_any: extent not divisible by K");
    BinaryMask out(m.rows() / k, m.cols() / k, 0);
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c)
            if (m(r, c)) out(r / k, c / k) = 1;
    return out;
}

inline nlohmann::json to_json(const PointLabelSet& set)
{
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : set.points) pts.push_back({{"row", p.row}, {"col", p.col}, {"side", p.side}});
    return {{"image", set.image_id}, {"points", pts}};
}

inline PointLabelSet points_from_json(const nlohmann::json& j)
{
    PointLabelSet set;
    try {
        set.image_id = j.at("image").get<std::string>();
        for (const auto& p : j.at("points")) {
            PointLabel pl;
            pl.row = p.at("row").get<int>();
            pl.col = p.at("col").get<int>();
            pl.side = p.value("side", point_side);
            set.points.push_back(pl);
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("point label json: ") + e.what());
    }
    return set;
}

inline PointLabelSet load_points(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": " + e.what());
    }
    return points_from_json(j);
}

inline void save_points(const PointLabelSet& set, const std::string& path)
{
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << to_json(set).dump(2) << '\n';
}

} // namespace nfanet
