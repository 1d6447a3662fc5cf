// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace nfanet;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name)
{
    const auto dir = fs::temp_directory_path() / ("nfanet_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

Corpus numbered_corpus(int n)
{
    Corpus c;
    for (int i = 0; i < n; ++i) {
        CorpusItem it;
        it.id = std::to_string(i);
        c.items.push_back(it);
    }
    return c;
}

std::array<int, 3> split_counts(const Corpus& c)
{
    return {int(c.select(Split::train).size()), int(c.select(Split::val).size()), int(c.select(Split::test).size())};
}

} // namespace

TEST(PointLabels, SolidBlockGetsOneInteriorSquare)
{
    BinaryMask m(30, 30, 0);
    for (int r = 5; r < 25; ++r)
        for (int c = 5; c < 25; ++c) m(r, c) = 1;
    const auto pts = generate_point_labels(m, 1);
    ASSERT_EQ(pts.points.size(), 1u);
    EXPECT_FALSE(pts.points[0].fallback);
    const auto raster = rasterize(pts, 30, 30);
    EXPECT_EQ(count_foreground(raster), 25u);
    for (std::size_t i = 0; i < m.size(); ++i)
        if (raster.values()[i]) {
            EXPECT_EQ(m.values()[i], 1);
        }
}

TEST(PointLabels, OnePerComponentInsideIt)
{
    BinaryMask three(30, 30, 0);
    for (int r = 0; r < 7; ++r)
        for (int c = 0; c < 7; ++c) three(r + 1, c + 1) = three(r + 12, c + 12) = three(r + 22, c + 2) = 1;
    EXPECT_EQ(generate_point_labels(three, 2).points.size(), 3u);

    std::mt19937_64 rng(3);
    for (int n = 0; n < 50; ++n) {
        const auto m = oracle::random_blobs(40, 40, 5, rng);
        const auto pts = generate_point_labels(m, n);
        const auto roots = oracle::component_roots(m, 8, 1);
        std::set<int> comps(roots.begin(), roots.end());
        comps.erase(-1);
        ASSERT_EQ(pts.points.size(), comps.size());
        std::set<int> covered;
        for (const auto& p : pts.points) {
            pts.validate(40, 40);
            if (p.fallback) continue;
            const int root = roots[p.row * 40 + p.col];
            for (int r = p.top(); r < p.top() + p.side; ++r)
                for (int c = p.left(); c < p.left() + p.side; ++c) ASSERT_EQ(roots[r * 40 + c], root);
            covered.insert(root);
        }
        const auto interior = std::count_if(pts.points.begin(), pts.points.end(), [](const PointLabel& p) { return !p.fallback; });
        EXPECT_EQ(covered.size(), std::size_t(interior)); // one square per component
    }
}

TEST(PointLabels, DeterministicAndEmpty)
{
    std::mt19937_64 rng(4);
    const auto m = oracle::random_blobs(40, 40, 6, rng);
    EXPECT_EQ(generate_point_labels(m, 5).points, generate_point_labels(m, 5).points);
    EXPECT_TRUE(generate_point_labels(BinaryMask(10, 10, 0), 5).empty());
}

TEST(PointLabels, ThinComponentFallsBack)
{
    BinaryMask ditch(20, 20, 0);
    for (int c = 0; c < 20; ++c) ditch(10, c) = 1;
    const auto pts = generate_point_labels(ditch, 1);
    ASSERT_EQ(pts.points.size(), 1u);
    EXPECT_TRUE(pts.points[0].fallback);
    EXPECT_NO_THROW(pts.validate(20, 20));
    EXPECT_EQ(rasterize(pts, 20, 20)(10, pts.points[0].col), 1);
}

TEST(PointLabels, JsonRoundTrip)
{
    PointLabelSet set{"tile", {{3, 4}, {10, 12, 5}}};
    const auto back = points_from_json(to_json(set));
    EXPECT_EQ(back.image_id, "tile");
    EXPECT_EQ(back.points, set.points);
    const auto j = to_json(set);
    EXPECT_EQ(j.at("image"), "tile");
    EXPECT_EQ(j.at("points").at(1).at("side"), 5);
}

TEST(Split, SixtyTwentyTwentyCounts)
{
    auto big = numbered_corpus(1000);
    split_corpus(big, {}, 1);
    EXPECT_EQ(split_counts(big), (std::array<int, 3>{600, 200, 200}));
    auto small = numbered_corpus(10);
    split_corpus(small, {}, 1);
    EXPECT_EQ(split_counts(small), (std::array<int, 3>{6, 2, 2}));
}

TEST(Split, DeterministicPartition)
{
    auto a = numbered_corpus(37), b = numbered_corpus(37), c = numbered_corpus(37);
    split_corpus(a, {}, 9);
    split_corpus(b, {}, 9);
    split_corpus(c, {}, 10);
    bool differs = false;
    for (int i = 0; i < 37; ++i) {
        EXPECT_EQ(a.items[i].split, b.items[i].split);
        EXPECT_NE(a.items[i].split, Split::unassigned);
        differs |= a.items[i].split != c.items[i].split;
    }
    EXPECT_TRUE(differs);
    EXPECT_THROW(split_corpus(a, {0.5, 0.2, 0.2}, 1), ConfigError);
}

TEST(Padding, ReflectsLastRowAndColumn)
{
    Grid<int> g(5, 5);
    for (int i = 0; i < 25; ++i) g.values()[i] = i;
    const auto [padded, rec] = pad_to_multiple(g, 2);
    ASSERT_EQ(padded.rows(), 6);
    ASSERT_EQ(padded.cols(), 6);
    for (int c = 0; c < 5; ++c) EXPECT_EQ(padded(5, c), g(3, c));
    for (int r = 0; r < 5; ++r) EXPECT_EQ(padded(r, 5), g(r, 3));
    EXPECT_EQ(unpad(padded, rec), g);

    const ImageTensor big(492, 492, 1);
    const auto [same, rec2] = pad_to_multiple(big, 2);
    EXPECT_EQ(same, big);
    EXPECT_EQ(rec2.pad_bottom + rec2.pad_right, 0);
}

TEST(Padding, RoundTripRandomShapes)
{
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> ext(1, 23), fac(1, 16);
    for (int n = 0; n < 200; ++n) {
        const auto img = oracle::random_image(ext(rng), ext(rng), 2, rng);
        const int k = fac(rng);
        const auto [padded, rec] = pad_to_multiple(img, k);
        EXPECT_EQ(padded.height() % k, 0);
        EXPECT_EQ(padded.width() % k, 0);
        EXPECT_EQ(unpad(padded, rec), img);
    }
}

TEST(Synthetic, Bookkeeping)
{
    SyntheticConfig cfg;
    const auto corpus = synthesize(cfg);
    ASSERT_EQ(corpus.items.size(), 200u);
    for (const auto& it : corpus.items) {
        ASSERT_TRUE(it.mask);
        EXPECT_EQ(it.image.height(), 64);
        EXPECT_EQ(it.mask->rows(), 64);
        EXPECT_FALSE(it.points.empty());
        EXPECT_NO_THROW(it.image.validate());
        EXPECT_NO_THROW(it.points.validate(64, 64));
        EXPECT_EQ(it.points.points.size(), generate_point_labels(*it.mask, 0).points.size());
    }
    const auto again = synthesize(cfg);
    EXPECT_EQ(again.items[17].image, corpus.items[17].image);
    EXPECT_EQ(again.items[17].points.points, corpus.items[17].points.points);
}

TEST(Synthetic, WaterIsSmootherThanBackground)
{
    SyntheticConfig cfg;
    cfg.n_images = 20;
    const auto corpus = synthesize(cfg);
    double water = 0, land = 0;
    long nw = 0, nl = 0;
    for (const auto& it : corpus.items) {
        const auto& m = *it.mask;
        for (int r = 1; r + 1 < m.rows(); ++r)
            for (int c = 1; c + 1 < m.cols(); ++c) {
                // 3x3 windows entirely inside one class
                int fg = 0;
                double s = 0, s2 = 0;
                for (int dr = -1; dr <= 1; ++dr)
                    for (int dc = -1; dc <= 1; ++dc) {
                        fg += m(r + dr, c + dc);
                        const double v = it.image(r + dr, c + dc, 0);
                        s += v;
                        s2 += v * v;
                    }
                const double var = s2 / 9 - (s / 9) * (s / 9);
                if (fg == 9) {
                    water += var;
                    ++nw;
                } else if (fg == 0) {
                    land += var;
                    ++nl;
                }
            }
    }
    ASSERT_GT(nw, 0);
    ASSERT_GT(nl, 0);
    EXPECT_LT(water / nw, land / nl);
}

TEST(Synthetic, ZeroBlobs)
{
    SyntheticConfig cfg;
    cfg.n_images = 3;
    cfg.min_blobs = cfg.max_blobs = 0;
    for (const auto& it : synthesize(cfg).items) {
        EXPECT_EQ(count_foreground(*it.mask), 0u);
        EXPECT_TRUE(it.points.empty());
    }
}

TEST(ImageIo, PngAndNpyRoundTrip)
{
    const auto dir = scratch_dir("io");
    std::mt19937_64 rng(6);
    ImageTensor img(6, 5, 3);
    std::uniform_int_distribution<int> byte(0, 255);
    for (auto& v : img.values()) v = byte(rng) / 255.0f;
    io::write_image_png(img, (dir / "a.png").string());
    const auto back = io::read_image_png((dir / "a.png").string());
    ASSERT_TRUE(back.same_shape(img));
    for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(back.values()[i], img.values()[i], 1e-6);

    const auto mask = oracle::random_mask(7, 9, 0.5, rng);
    io::write_mask_png(mask, (dir / "m.png").string());
    EXPECT_EQ(io::read_mask_png((dir / "m.png").string()), mask);

    const auto raw = oracle::random_image(4, 6, 2, rng);
    io::write_image_npy(raw, (dir / "x.npy").string());
    EXPECT_EQ(io::read_image((dir / "x.npy").string()), raw);

    FeatureStack f(3, 4, 5, 4);
    std::normal_distribution<float> n;
    for (auto& v : f.values()) v = n(rng);
    io::write_features_npy(f, (dir / "f.npy").string());
    const auto fb = io::read_features_npy((dir / "f.npy").string());
    EXPECT_EQ(fb.values(), f.values());
    EXPECT_EQ(fb.members(), 4);

    EXPECT_THROW(io::read_image_png((dir / "missing.png").string()), IoError);
    fs::remove_all(dir);
}

TEST(Manifest, WriteAndLoad)
{
    const auto dir = scratch_dir("manifest");
    SyntheticConfig cfg;
    cfg.n_images = 6;
    cfg.rows = cfg.cols = 32;
    cfg.max_radius = 10;
    auto corpus = synthesize(cfg);
    split_corpus(corpus, {}, 3);
    corpus.items[2].mask.reset();
    write_corpus(corpus, dir);
    const auto loaded = load_corpus(dir / "manifest.json");
    ASSERT_EQ(loaded.items.size(), 6u);
    for (std::size_t i = 0; i < 6; ++i) {
        EXPECT_EQ(loaded.items[i].id, corpus.items[i].id);
        EXPECT_EQ(loaded.items[i].split, corpus.items[i].split);
        EXPECT_EQ(loaded.items[i].points.points, corpus.items[i].points.points);
        EXPECT_EQ(loaded.items[i].mask.has_value(), corpus.items[i].mask.has_value());
        // images are 8-bit quantised by construction, so PNG is lossless here
        EXPECT_EQ(loaded.items[i].image, corpus.items[i].image);
    }
    EXPECT_THROW(load_corpus(dir / "nope.json"), IoError);
    fs::remove_all(dir);
}

TEST(RunConfig, JsonRoundTripAndValidation)
{
    PipelineConfig cfg;
    cfg.sampler.k = 3;
    cfg.train.learning_rate = 5e-4;
    cfg.train.seed = 42;
    cfg.morph = MorphConfig{2, 10, 4};
    const auto back = pipeline_config_from_json(to_json(cfg));
    EXPECT_EQ(to_json(back), to_json(cfg));
    EXPECT_EQ(config_hash(back), config_hash(cfg));

    auto other = cfg;
    other.train.seed = 43;
    EXPECT_NE(config_hash(other), config_hash(cfg));

    EXPECT_THROW(pipeline_config_from_json(nlohmann::json{{"train", {{"lr", 1}}}}), ConfigError);
    EXPECT_THROW(pipeline_config_from_json(nlohmann::json{{"sampler", {{"k", 0}}}}), ConfigError);
    EXPECT_THROW(pipeline_config_from_json(nlohmann::json{{"train", {{"batch_size", "four"}}}}), ConfigError);
    EXPECT_NO_THROW(pipeline_config_from_json(nlohmann::json{{"run_id", "x"}}, {"run_id"}));

    // every TrainConfig field appears in the JSON form
    EXPECT_EQ(to_json(TrainConfig{}).size(), 14u);
}
