// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace nfanet;

namespace {

/// Closed-form parameter count: two 3x3 bias-free convolutions with batch
/// norm (scale and shift) per encoder level, the same per decoder level on
/// the concatenated input, and a 1x1 head with bias.
std::size_t closed_form_count(int depth, int base, int in)
{
    auto conv_block = [](std::size_t cin, std::size_t cout) { return 9 * cin * cout + 2 * cout + 9 * cout * cout + 2 * cout; };
    std::size_t total = 0;
    std::size_t prev = in;
    for (int i = 0; i < depth; ++i) {
        const std::size_t ch = static_cast<std::size_t>(base) << i;
        total += conv_block(prev, ch);
        prev = ch;
    }
    for (int i = depth - 2; i >= 0; --i) {
        const std::size_t ch = static_cast<std::size_t>(base) << i;
        total += conv_block(ch + 2 * ch, ch);
    }
    return total + 2 * static_cast<std::size_t>(base) + 2;
}

NetworkConfig tiny(int depth = 2, int base = 2)
{
    NetworkConfig cfg;
    cfg.depth = depth;
    cfg.base_channels = base;
    cfg.in_channels = 3;
    cfg.seed = 3;
    return cfg;
}

template <typename S>
Tensor4<S> random_batch(int n, int c, int h, int w, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor4<S> t(n, c, h, w);
    for (auto& v : t.data) v = static_cast<S>(u(rng));
    return t;
}

} // namespace

TEST(Network, ParameterCountClosedForm)
{
    for (auto [depth, base] : {std::pair{4, 16}, {2, 2}, {1, 4}, {3, 5}}) {
        UNet<float> net(tiny(depth, base));
        EXPECT_EQ(net.parameter_count(), closed_form_count(depth, base, 3)) << depth << "/" << base;
    }
    EXPECT_EQ(closed_form_count(2, 2, 3), 488u);
}

TEST(Network, SeededInitIsReproducible)
{
    UNet<float> a(tiny(3, 4)), b(tiny(3, 4));
    auto pa = a.parameters(), pb = b.parameters();
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value);
    auto cfg = tiny(3, 4);
    cfg.seed = 4;
    UNet<float> c(cfg);
    EXPECT_NE(pa[0]->value, c.parameters()[0]->value);
}

TEST(Network, ShapeContract)
{
    NetworkConfig cfg;
    UNet<float> net(cfg);
    const auto out = net.infer(random_batch<float>(1, 3, 32, 32, 1));
    EXPECT_EQ(out.logits.c, 2);
    EXPECT_EQ(out.logits.h, 32);
    EXPECT_EQ(out.logits.w, 32);
    EXPECT_EQ(out.features.c, cfg.base_channels);
    EXPECT_EQ(out.features.h, 32);
    EXPECT_EQ(net.feature_channels(), cfg.base_channels);

    UNet<float> flat(tiny(1, 4));
    const auto o1 = flat.infer(random_batch<float>(2, 3, 5, 7, 2));
    EXPECT_EQ(o1.logits.h, 5);
    EXPECT_EQ(o1.logits.w, 7);
}

TEST(Network, EvalModeIsPure)
{
    UNet<float> net(tiny(3, 4));
    auto batch = random_batch<float>(2, 3, 8, 8, 3);
    std::copy(batch.sample(0), batch.sample(0) + batch.sample_size(), batch.sample(1));
    const auto out = net.infer(batch);
    for (std::size_t i = 0; i < out.logits.sample_size(); ++i) EXPECT_EQ(out.logits.sample(0)[i], out.logits.sample(1)[i]);
    const auto again = net.infer(batch);
    EXPECT_EQ(out.logits.data, again.logits.data);
}

TEST(Network, GroupForward)
{
    UNet<float> net(tiny(2, 3));
    std::mt19937_64 rng(4);
    const auto img = oracle::random_image(8, 8, 3, rng);

    const auto single = forward_group(net, sample(img, SamplerConfig{1}));
    const auto direct = net.infer(to_batch<float>(std::vector<ImageTensor>{img}));
    ASSERT_EQ(single.members(), 1);
    for (int c = 0; c < single.channels(); ++c)
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j) EXPECT_EQ(single(i, j, c, 0), direct.features.channel(0, c)[i * 8 + j]);

    const auto stack = forward_group(net, sample(img, SamplerConfig{2}));
    EXPECT_EQ(stack.rows(), 4);
    EXPECT_EQ(stack.cols(), 4);
    EXPECT_EQ(stack.channels(), 3);
    EXPECT_EQ(stack.members(), 4);

    NeighborGroup same;
    same.k = 2;
    const auto member = sample(img, SamplerConfig{2}).members[0];
    same.members.assign(4, member);
    const auto dup = forward_group(net, same);
    for (int l = 1; l < 4; ++l)
        for (int c = 0; c < 3; ++c)
            for (int i = 0; i < 4; ++i)
                for (int j = 0; j < 4; ++j) EXPECT_EQ(dup(i, j, c, l), dup(i, j, c, 0));
}

TEST(Network, GradientMatchesFiniteDifferences)
{
    UNet<double> net(tiny(2, 2));
    ASSERT_LE(net.parameter_count(), 5000u);
    const auto x = random_batch<double>(2, 3, 8, 8, 5);
    std::mt19937_64 rng(6);
    std::vector<BinaryMask> targets{oracle::random_mask(8, 8, 0.4, rng), oracle::random_mask(8, 8, 0.4, rng)};
    auto loss_at = [&] { return compute_loss(net.forward(x).logits, targets, Supervision::dense).value; };

    net.zero_grad();
    const auto l = compute_loss(net.forward(x).logits, targets, Supervision::dense);
    net.backward(l.grad);
    std::vector<double> analytic;
    for (auto* p : net.parameters()) analytic.insert(analytic.end(), p->grad.begin(), p->grad.end());

    const double h = 1e-4;
    std::size_t idx = 0, above_fine = 0, above_coarse = 0;
    for (auto* p : net.parameters())
        for (std::size_t i = 0; i < p->size(); ++i, ++idx) {
            const double keep = p->value[i];
            p->value[i] = keep + h;
            const double up = loss_at();
            p->value[i] = keep - h;
            const double down = loss_at();
            p->value[i] = keep;
            const double numeric = (up - down) / (2 * h);
            const double rel = std::abs(analytic[idx] - numeric) / std::max({std::abs(analytic[idx]), std::abs(numeric), 1e-8});
            above_fine += rel >= 1e-3;
            above_coarse += rel >= 1e-2;
        }
    EXPECT_LE(above_fine, analytic.size() / 20);
    EXPECT_EQ(above_coarse, 0u);
}

TEST(Loss, UniformHalfOnTwoPixels)
{
    Tensor4<double> logits(1, 2, 1, 2, 0.0);
    BinaryMask target(1, 2, 0);
    target(0, 0) = 1;
    const auto l = compute_loss(logits, {target}, Supervision::dense);
    EXPECT_NEAR(l.cross_entropy, std::log(2.0), 1e-12);
    EXPECT_NEAR(l.dice, 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(l.value, std::log(2.0) + 1.0 / 3.0, 1e-12);
}

TEST(Loss, PerfectPredictionLimit)
{
    Tensor4<double> logits(1, 2, 4, 4, 0.0);
    for (std::size_t k = 0; k < 16; ++k) logits.channel(0, 1)[k] = 30.0;
    const auto l = compute_loss(logits, {BinaryMask(4, 4, 1)}, Supervision::dense);
    EXPECT_LT(l.value, 1e-9);
}

TEST(Loss, PointModeSupervisesOnlyPositives)
{
    Tensor4<double> logits(1, 2, 3, 3, 0.0);
    const auto empty = compute_loss(logits, {BinaryMask(3, 3, 0)}, Supervision::point_positive_only, nullptr, true);
    EXPECT_EQ(empty.value, 0.0);
    EXPECT_EQ(empty.supervised_pixels, 0u);
    for (double g : empty.grad.data) EXPECT_EQ(g, 0.0);

    BinaryMask pts(3, 3, 0);
    pts(1, 1) = 1;
    const auto one = compute_loss(logits, {pts}, Supervision::point_positive_only);
    EXPECT_EQ(one.supervised_pixels, 1u);
    EXPECT_NEAR(one.cross_entropy, std::log(2.0), 1e-12);
    EXPECT_EQ(one.grad.channel(0, 1)[0], 0.0);
    EXPECT_NE(one.grad.channel(0, 1)[4], 0.0);
}

TEST(Adam, CoupledWeightDecayStep)
{
    Param<double> p("w", {1}, 1.0);
    p.grad[0] = 0.5;
    Adam<double> adam(0.1, 0.01);
    adam.step({&p});
    const double g = 0.5 + 0.01 * 1.0;
    const double m = 0.1 * g / (1 - 0.9), v = 0.001 * g * g / (1 - 0.999);
    EXPECT_NEAR(p.value[0], 1.0 - 0.1 * m / (std::sqrt(v) + 1e-8), 1e-12);
    EXPECT_EQ(adam.steps(), 1);
}

TEST(Checkpoint, RoundTrip)
{
    UNet<float> net(tiny(3, 4));
    // move running statistics away from their initial values
    net.forward(random_batch<float>(2, 3, 8, 8, 7));
    const auto path = std::filesystem::temp_directory_path() / "nfanet_ckpt_test.bin";
    save_checkpoint(net, path.string());
    const auto loaded = load_checkpoint<float>(path.string());
    EXPECT_EQ(loaded->config().depth, 3);
    auto a = net.parameters(), b = loaded->parameters();
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->value, b[i]->value);
    auto ba = net.buffers(), bb = loaded->buffers();
    for (std::size_t i = 0; i < ba.size(); ++i) EXPECT_EQ(ba[i]->value, bb[i]->value);
    const auto x = random_batch<float>(1, 3, 8, 8, 8);
    EXPECT_EQ(net.infer(x).logits.data, loaded->infer(x).logits.data);

    {
        std::ofstream bad(path, std::ios::binary);
        bad << "garbage";
    }
    EXPECT_THROW(load_checkpoint<float>(path.string()), IoError);
    std::filesystem::remove(path);
}
