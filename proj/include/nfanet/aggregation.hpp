// SPDX-License-Identifier: Apache-2.0
//
// Neighbour feature aggregation: channel-max pooling, per-map Otsu
// binarisation and pixel-wise voting across the members of a group.

#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "core.hpp"

namespace nfanet {

/// One single-channel saliency map per group member.
struct SaliencyStack {
    std::vector<RealMap> maps;

    int members() const noexcept { return static_cast<int>(maps.size()); }
};

struct OtsuResult {
    BinaryMask mask;
    int threshold = 0;       ///< bins strictly above this are foreground
    bool degenerate = false; ///< constant map: all-zero mask, threshold meaningless
};

struct VoteResult {
    BinaryMask mask;
    Grid<int> vote_counts;
    int threshold_votes = 1;
};

inline constexpr int otsu_bins = 256;

/// Majority rule: at least ceil(L/2) positive members.
inline int default_vote_threshold(int members) { return (members + 1) / 2; }

inline SaliencyStack cmax_pool(const FeatureStack& stack)
{
    SaliencyStack out;
    out.maps.reserve(stack.members());
    const std::size_t plane = static_cast<std::size_t>(stack.rows()) * stack.cols();
    for (int l = 0; l < stack.members(); ++l) {
        RealMap z(stack.rows(), stack.cols(), -std::numeric_limits<double>::infinity());
        for (int c = 0; c < stack.channels(); ++c) {
            const float* f = stack.plane(c, l);
            for (std::size_t p = 0; p < plane; ++p) {
                if (!std::isfinite(f[p])) throw DataError("cmax_pool: non-finite feature value");
                z.values()[p] = std::max(z.values()[p], static_cast<double>(f[p]));
            }
        }
        out.maps.push_back(std::move(z));
    }
    return out;
}

/// Map each value onto one of 256 equal-width bins spanning [min, max].
/// Returns false when the map is constant.
inline bool otsu_bin_indices(const RealMap& map, Grid<int>& bins)
{
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (double v : map.values()) {
        if (!std::isfinite(v)) throw DataError("otsu_binarize: non-finite value");
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    bins = Grid<int>(map.rows(), map.cols(), 0);
    if (map.empty() || !(hi > lo)) return false;
    const double range = hi - lo;
    for (std::size_t i = 0; i < map.size(); ++i) {
        const int b = static_cast<int>(std::floor((map.values()[i] - lo) / range * otsu_bins));
        bins.values()[i] = std::clamp(b, 0, otsu_bins - 1);
    }
    return true;
}

/// Otsu threshold on a 256-bin histogram.
///
/// The between-class variance for threshold t (class 0 = bins <= t) is
/// proportional to (s0*N - S*n0)^2 / (n0*n1), where n0/s0 are the count and
/// bin-index sum of class 0 and N/S the totals. All terms are integers so the
/// comparison between candidates is exact; ties go to the smaller t.
inline int otsu_threshold(const std::vector<long long>& histogram)
{
    long long total = 0, total_sum = 0;
    for (int b = 0; b < static_cast<int>(histogram.size()); ++b) {
        total += histogram[b];
        total_sum += histogram[b] * b;
    }
    int best_t = 0;
    __int128 best_num = -1, best_den = 1;
    long long n0 = 0, s0 = 0;
    for (int t = 0; t + 1 < static_cast<int>(histogram.size()); ++t) {
        n0 += histogram[t];
        s0 += histogram[t] * t;
        const long long n1 = total - n0;
        if (n0 == 0 || n1 == 0) continue;
        const __int128 d = static_cast<__int128>(s0) * total - static_cast<__int128>(total_sum) * n0;
        const __int128 num = d * d;
        const __int128 den = static_cast<__int128>(n0) * n1;
        bool better;
        if (best_num < 0) {
            better = true;
        } else if (total <= (1LL << 21)) {
            better = num * best_den > best_num * den;
        } else {
            // products could overflow 128 bits; fall back to extended precision
            better = static_cast<long double>(num) / static_cast<long double>(den) >
                     static_cast<long double>(best_num) / static_cast<long double>(best_den);
        }
        if (better) {
            best_num = num;
            best_den = den;
            best_t = t;
        }
    }
    return best_t;
}

inline OtsuResult otsu_binarize(const RealMap& map)
{
    OtsuResult out;
    Grid<int> bins;
    out.mask = BinaryMask(map.rows(), map.cols(), 0);
    if (!otsu_bin_indices(map, bins)) {
        out.degenerate = true;
        return out;
    }
    std::vector<long long> histogram(otsu_bins, 0);
    for (int b : bins.values()) ++histogram[b];
    out.threshold = otsu_threshold(histogram);
    for (std::size_t i = 0; i < bins.size(); ++i) out.mask.values()[i] = bins.values()[i] > out.threshold ? 1 : 0;
    return out;
}

inline VoteResult vote(const std::vector<BinaryMask>& binarized, int threshold_votes)
{
    if (binarized.empty()) throw ShapeError("vote: need at least one member");
    const int members = static_cast<int>(binarized.size());
    if (threshold_votes < 1 || threshold_votes > members)
        throw ConfigError("vote: threshold must lie in [1, L]");
    const auto& first = binarized.front();
    for (const auto& m : binarized)
        if (!m.same_shape(first)) throw ShapeError("vote: member shapes differ");

    VoteResult out;
    out.threshold_votes = threshold_votes;
    out.vote_counts = Grid<int>(first.rows(), first.cols(), 0);
    out.mask = BinaryMask(first.rows(), first.cols(), 0);
    for (const auto& m : binarized)
        for (std::size_t i = 0; i < m.size(); ++i) out.vote_counts.values()[i] += m.values()[i] ? 1 : 0;
    for (std::size_t i = 0; i < out.mask.size(); ++i)
        out.mask.values()[i] = out.vote_counts.values()[i] >= threshold_votes ? 1 : 0;
    return out;
}

struct AggregateResult {
    VoteResult vote;
    std::vector<OtsuResult> member_masks;
    int degenerate_members = 0;
};

/// Vote(Otsu(CMax(stack))). threshold_votes <= 0 selects the majority default.
inline AggregateResult aggregate_detailed(const FeatureStack& stack, int threshold_votes = 0)
{
    AggregateResult out;
    const auto saliency = cmax_pool(stack);
    std::vector<BinaryMask> binarized;
    binarized.reserve(saliency.maps.size());
    for (const auto& z : saliency.maps) {
        out.member_masks.push_back(otsu_binarize(z));
        if (out.member_masks.back().degenerate) ++out.degenerate_members;
        binarized.push_back(out.member_masks.back().mask);
    }
    if (threshold_votes <= 0) threshold_votes = default_vote_threshold(stack.members());
    out.vote = vote(binarized, threshold_votes);
    return out;
}

inline VoteResult aggregate(const FeatureStack& stack, int threshold_votes = 0)
{
    return aggregate_detailed(stack, threshold_votes).vote;
}

} // namespace nfanet
