// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace nfanet;

namespace {

ImageTensor iota_image(int rows, int cols)
{
    ImageTensor img(rows, cols, 1);
    for (int i = 0; i < rows * cols; ++i) img.values()[i] = static_cast<float>(i);
    return img;
}

std::vector<float> flat(const ImageTensor& m) { return m.values(); }

} // namespace

TEST(Sampler, FourByFourRaster)
{
    const auto g = sample(iota_image(4, 4), SamplerConfig{2});
    ASSERT_EQ(g.size(), 4);
    EXPECT_EQ(flat(g.members[0]), (std::vector<float>{0, 2, 8, 10}));
    EXPECT_EQ(flat(g.members[1]), (std::vector<float>{1, 3, 9, 11}));
    EXPECT_EQ(flat(g.members[2]), (std::vector<float>{4, 6, 12, 14}));
    EXPECT_EQ(flat(g.members[3]), (std::vector<float>{5, 7, 13, 15}));
    EXPECT_EQ(reassemble(g), iota_image(4, 4));
}

TEST(Sampler, TwoByTwoCells)
{
    const auto g = sample(iota_image(2, 2), SamplerConfig{2});
    for (int l = 0; l < 4; ++l) {
        ASSERT_EQ(g.members[l].height(), 1);
        EXPECT_EQ(g.members[l](0, 0, 0), float(l));
    }
}

TEST(Sampler, UnitFactorIsIdentity)
{
    std::mt19937_64 rng(1);
    const auto img = oracle::random_image(5, 7, 3, rng);
    const auto g = sample(img, SamplerConfig{1});
    ASSERT_EQ(g.size(), 1);
    EXPECT_EQ(g.members[0], img);
    EXPECT_EQ(reassemble(g), img);
}

TEST(Sampler, CheckerboardMask)
{
    BinaryMask board(4, 4);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) board(r, c) = (r + c) % 2 == 0;
    const auto m = sample_mask(board, SamplerConfig{2});
    EXPECT_EQ(count_foreground(m[0]), 4u);
    EXPECT_EQ(count_foreground(m[1]), 0u);
    EXPECT_EQ(count_foreground(m[2]), 0u);
    EXPECT_EQ(count_foreground(m[3]), 4u);
}

TEST(Sampler, ConstantMasks)
{
    for (int k : {1, 2, 3}) {
        for (std::uint8_t v : {0, 1}) {
            const BinaryMask m(6, 6, v);
            for (const auto& member : sample_mask(m, SamplerConfig{k})) EXPECT_EQ(member, BinaryMask(6 / k, 6 / k, v));
        }
    }
}

TEST(Sampler, RoundTripAndConservation)
{
    std::mt19937_64 rng(2);
    for (int k : {2, 4}) {
        for (int n = 0; n < 100; ++n) {
            const auto img = oracle::random_image(8, 8, 3, rng);
            const auto g = sample(img, SamplerConfig{k});
            EXPECT_EQ(reassemble(g), img);
            std::vector<float> pooled;
            for (const auto& m : g.members) pooled.insert(pooled.end(), m.values().begin(), m.values().end());
            auto source = img.values();
            std::sort(pooled.begin(), pooled.end());
            std::sort(source.begin(), source.end());
            EXPECT_EQ(pooled, source);
        }
    }
}

TEST(Sampler, MatchesIndexingFormula)
{
    std::mt19937_64 rng(3);
    for (int side : {6, 8})
        for (int k = 1; k <= side; ++k) {
            if (side % k) continue;
            const auto img = oracle::random_image(side, side, 2, rng);
            const auto g = sample(img, SamplerConfig{k});
            for (int l = 0; l < k * k; ++l)
                for (int i = 0; i < side / k; ++i)
                    for (int j = 0; j < side / k; ++j)
                        for (int c = 0; c < 2; ++c) ASSERT_EQ(g.members[l](i, j, c), oracle::sampled_value(img, k, l, i, j, c));
        }
}

TEST(Sampler, Deterministic)
{
    std::mt19937_64 rng(4);
    const auto img = oracle::random_image(12, 12, 3, rng);
    const auto a = sample(img, SamplerConfig{3});
    const auto b = sample(img, SamplerConfig{3});
    for (int l = 0; l < 9; ++l) EXPECT_EQ(a.members[l], b.members[l]);
}

TEST(Sampler, RejectsNonDivisible)
{
    EXPECT_THROW(sample(ImageTensor(5, 4, 1), SamplerConfig{2}), ShapeError);
    EXPECT_THROW(sample(ImageTensor(4, 4, 1), SamplerConfig{0}), ConfigError);
    auto g = sample(ImageTensor(4, 4, 1), SamplerConfig{2});
    g.members.pop_back();
    EXPECT_THROW(reassemble(g), ShapeError);
}

TEST(Sampler, GridRoundTrip)
{
    std::mt19937_64 rng(5);
    const auto m = oracle::random_mask(9, 12, 0.4, rng);
    EXPECT_EQ(reassemble_grid(sample_grid(m, SamplerConfig{3}), 3), m);
}

TEST(Sampler, SimilarityZeroOnConstantImage)
{
    const ImageTensor flat_img(8, 8, 3, 0.25f);
    EXPECT_DOUBLE_EQ(neighbor_similarity(sample(flat_img, SamplerConfig{2})), 0.0);
}
