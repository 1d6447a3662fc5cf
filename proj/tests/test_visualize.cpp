// SPDX-License-Identifier: Apache-2.0

#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace nfanet;

namespace {

bool painted(const ImageTensor& rgb, int r, int c, const std::array<float, 3>& col)
{
    return rgb(r, c, 0) == col[0] && rgb(r, c, 1) == col[1] && rgb(r, c, 2) == col[2];
}

} // namespace

TEST(Boundary, MatchesNeighbourOracle)
{
    std::mt19937_64 rng(1);
    for (int n = 0; n < 100; ++n) {
        const auto m = oracle::random_blobs(20, 20, 5, rng);
        EXPECT_EQ(boundary(m), oracle::boundary(m));
    }
    EXPECT_EQ(count_foreground(boundary(BinaryMask(5, 5, 1))), 0u);
}

TEST(Visualize, MatchingMasksAreYellowOnly)
{
    std::mt19937_64 rng(2);
    const auto img = oracle::random_image(20, 20, 3, rng);
    const auto m = oracle::random_blobs(20, 20, 4, rng);
    const auto ov = visualize(img, m, m);
    const auto b = oracle::boundary(m);
    for (int r = 0; r < 20; ++r)
        for (int c = 0; c < 20; ++c) {
            EXPECT_EQ(painted(ov.rgb, r, c, both_color), bool(b(r, c)));
            EXPECT_FALSE(painted(ov.rgb, r, c, pred_color));
            EXPECT_FALSE(painted(ov.rgb, r, c, gt_color));
            if (!b(r, c)) {
                EXPECT_FLOAT_EQ(ov.rgb(r, c, 1), 0.6f * img(r, c, 1));
            }
        }
}

TEST(Visualize, EmptyPredictionShowsGroundTruth)
{
    std::mt19937_64 rng(3);
    const auto img = oracle::random_image(16, 16, 1, rng);
    const auto gt = oracle::random_blobs(16, 16, 3, rng);
    const auto ov = visualize(img, BinaryMask(16, 16, 0), gt);
    const auto b = oracle::boundary(gt);
    for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c) EXPECT_EQ(painted(ov.rgb, r, c, gt_color), bool(b(r, c)));
    EXPECT_EQ(count_foreground(ov.pred_boundary), 0u);
    EXPECT_THROW(visualize(img, BinaryMask(15, 16, 0)), ShapeError);
}
