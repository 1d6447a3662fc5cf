// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
// failure. The end-to-end criteria share a single synthetic run.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <sstream>

#include "oracles.hpp"

using namespace nfanet;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, bool ok, const std::string& detail)
{
    std::printf("%s C%d %s\n", ok ? "PASS" : "FAIL", id, detail.c_str());
    std::fflush(stdout);
    failures += ok ? 0 : 1;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0)
{
    char buf[256];
    std::snprintf(buf, sizeof(buf), f, a, b, c, d);
    return buf;
}

// ---------------------------------------------------------------------------

void criterion_sampler()
{
    const auto t0 = Clock::now();
    std::mt19937_64 rng(101);
    bool ok = true;
    for (int k = 1; k <= 4 && ok; ++k)
        for (int n = 0; n < 100 && ok; ++n) {
            std::uniform_int_distribution<int> cells(1, 8), ch(1, 4);
            const auto img = oracle::random_image(k * cells(rng), k * cells(rng), ch(rng), rng);
            ok = reassemble(sample(img, SamplerConfig{k})) == img;
        }
    const bool round_trip = ok;

    long checked = 0;
    for (int size : {6, 8})
        for (int k = 1; k <= size && ok; ++k) {
            if (size % k) continue;
            const auto img = oracle::random_image(size, size, 2, rng);
            const auto g = sample(img, SamplerConfig{k});
            for (int l = 0; l < k * k; ++l)
                for (int i = 0; i < size / k; ++i)
                    for (int j = 0; j < size / k; ++j)
                        for (int c = 0; c < 2; ++c, ++checked)
                            ok = ok && g.members[l](i, j, c) == oracle::sampled_value(img, k, l, i, j, c);
        }
    const double secs = seconds_since(t0);
    report(1, round_trip && ok && secs < 5.0,
           "sampler: 400 round trips, " + std::to_string(checked) + " indexed values on 6x6/8x8, " + fmt("%.2f s", secs));
}

void criterion_otsu()
{
    const auto t0 = Clock::now();
    std::mt19937_64 rng(202);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int mismatches = 0;
    for (int n = 0; n < 500; ++n) {
        RealMap m(16, 16);
        for (auto& v : m.values()) v = u(rng);
        if (n % 4 == 0)
            for (auto& v : m.values()) v = std::floor(v * 7);
        const auto got = otsu_binarize(m);
        const auto want = oracle::otsu(m);
        mismatches += got.threshold != want.threshold || got.mask != want.mask || got.degenerate != want.degenerate;
    }
    const double secs = seconds_since(t0);
    report(2, mismatches == 0 && secs < 10.0, "otsu: 500 maps, " + std::to_string(mismatches) + " mismatches, " + fmt("%.2f s", secs));
}

void criterion_oracles()
{
    // random point masks are sometimes empty, which the constraint reports
    const auto keep = log_level();
    log_level() = LogLevel::error;
    std::mt19937_64 rng(303);
    int vote_bad = 0, cmax_bad = 0, constraint_bad = 0, fill_bad = 0, open_bad = 0;
    std::normal_distribution<float> gauss(0.f, 1.f);
    for (int n = 0; n < 200; ++n) {
        std::uniform_int_distribution<int> ext(3, 20), members(1, 9);
        const int rows = ext(rng), cols = ext(rng), l = members(rng);

        std::vector<BinaryMask> ms;
        for (int i = 0; i < l; ++i) ms.push_back(oracle::random_mask(rows, cols, 0.5, rng));
        const int t = 1 + int(rng() % l);
        vote_bad += vote(ms, t).mask != oracle::vote(ms, t);

        FeatureStack f(rows, cols, 1 + int(rng() % 6), l);
        for (auto& v : f.values()) v = gauss(rng);
        const auto z = cmax_pool(f);
        const auto ref = oracle::cmax(f);
        for (int i = 0; i < l; ++i) cmax_bad += z.maps[i] != ref[i];

        const auto blobs = n % 2 ? oracle::random_blobs(rows, cols, 4, rng) : oracle::random_mask(rows, cols, 0.5, rng);
        const auto pts = oracle::random_mask(rows, cols, 0.03, rng);
        const int conn = n % 3 == 0 ? 4 : 8;
        constraint_bad += apply_point_constraint(blobs, pts, conn).mask != oracle::point_constraint(blobs, pts, conn);

        MorphConfig mc;
        mc.max_hole_area = long(rng() % 12);
        mc.connectivity = conn;
        fill_bad += fill_holes(blobs, mc) != oracle::fill_holes(blobs, mc.max_hole_area, conn);

        mc.open_radius = 1 + int(rng() % 2);
        open_bad += morph_open(blobs, mc) != oracle::open(blobs, mc.open_radius);
    }
    log_level() = keep;
    const int total = vote_bad + cmax_bad + constraint_bad + fill_bad + open_bad;
    std::ostringstream d;
    d << "oracles over 200 instances each: vote " << vote_bad << ", cmax " << cmax_bad << ", constraint " << constraint_bad
      << ", fill " << fill_bad << ", open " << open_bad << " mismatches";
    report(3, total == 0, d.str());
}

void criterion_metrics()
{
    bool ok = true;
    auto near = [&](double a, double b, double tol) { ok = ok && std::abs(a - b) <= tol; };

    BinaryMask left(4, 4, 0), top(4, 4, 0);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 2; ++c) left(r, c) = top(c, r) = 1;
    const auto half = metrics({left}, {top}).pooled;
    near(half.fg_iou, 1.0 / 3.0, 1e-9);
    near(half.bg_iou, 1.0 / 3.0, 1e-9);
    near(half.fg_dice, 0.5, 1e-9);
    near(half.mdice, 0.5, 1e-9);

    BinaryMask a(8, 8, 0), b(8, 8, 0);
    for (int c = 0; c < 8; ++c) {
        for (int r = 0; r < 4; ++r) a(r, c) = 1;
        for (int r = 2; r < 6; ++r) b(r, c) = 1;
    }
    const auto band = metrics({a}, {b}).pooled;
    near(band.fg_iou, 16.0 / 48.0, 1e-9);
    near(band.bg_dice, 0.5, 1e-9);
    BinaryMask dot(8, 8, 0);
    dot(0, 0) = 1;
    const auto corner = metrics({dot}, {BinaryMask(8, 8, 0)}).pooled;
    near(corner.bg_iou, 63.0 / 64.0, 1e-9);
    near(corner.bg_dice, 126.0 / 127.0, 1e-9);
    near(corner.fg_iou, 0.0, 1e-9);
    const bool hand = ok;

    std::mt19937_64 rng(404);
    bool identity = true, swap = true;
    for (int n = 0; n < 200; ++n) {
        std::vector<BinaryMask> p, g, pi, gi;
        for (int i = 0; i < 3; ++i) {
            p.push_back(oracle::random_mask(8, 8, 0.4, rng));
            g.push_back(oracle::random_mask(8, 8, 0.5, rng));
            pi.push_back(p.back());
            gi.push_back(g.back());
            for (auto& v : pi.back().values()) v = 1 - v;
            for (auto& v : gi.back().values()) v = 1 - v;
        }
        const auto r = metrics(p, g), s = metrics(pi, gi);
        std::vector<const Scores*> rows{&r.pooled};
        for (const auto& img : r.per_image) rows.push_back(&img);
        for (const auto* sc : rows) {
            identity = identity && std::abs(sc->fg_dice - 2 * sc->fg_iou / (1 + sc->fg_iou)) < 1e-12;
            identity = identity && std::abs(sc->bg_dice - 2 * sc->bg_iou / (1 + sc->bg_iou)) < 1e-12;
        }
        swap = swap && s.pooled.fg_iou == r.pooled.bg_iou && s.pooled.bg_iou == r.pooled.fg_iou &&
               s.pooled.fg_dice == r.pooled.bg_dice && s.pooled.bg_dice == r.pooled.fg_dice &&
               s.per_image_mean.fg_iou == r.per_image_mean.bg_iou && s.per_image_mean.bg_dice == r.per_image_mean.fg_dice;
    }
    report(4, hand && identity && swap,
           std::string("metrics: hand cases ") + (hand ? "ok" : "off") + ", dice-iou identity " + (identity ? "ok" : "off") +
               ", label swap " + (swap ? "ok" : "off"));
}

void criterion_gradient()
{
    const auto t0 = Clock::now();
    NetworkConfig cfg;
    cfg.depth = 2;
    cfg.base_channels = 2;
    cfg.seed = 3;
    UNet<double> net(cfg);
    std::mt19937_64 rng(505);
    Tensor4<double> x(2, 3, 8, 8);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (auto& v : x.data) v = u(rng);
    const std::vector<BinaryMask> targets{oracle::random_mask(8, 8, 0.4, rng), oracle::random_mask(8, 8, 0.4, rng)};

    net.zero_grad();
    const auto loss = compute_loss(net.forward(x).logits, targets, Supervision::dense);
    net.backward(loss.grad);
    std::vector<double> analytic;
    for (auto* p : net.parameters()) analytic.insert(analytic.end(), p->grad.begin(), p->grad.end());

    const double h = 1e-4;
    std::size_t idx = 0, fine = 0, coarse = 0;
    double worst = 0.0;
    for (auto* p : net.parameters())
        for (std::size_t i = 0; i < p->size(); ++i, ++idx) {
            const double keep = p->value[i];
            p->value[i] = keep + h;
            const double up = compute_loss(net.forward(x).logits, targets, Supervision::dense).value;
            p->value[i] = keep - h;
            const double down = compute_loss(net.forward(x).logits, targets, Supervision::dense).value;
            p->value[i] = keep;
            const double numeric = (up - down) / (2 * h);
            const double rel = std::abs(analytic[idx] - numeric) / std::max({std::abs(analytic[idx]), std::abs(numeric), 1e-8});
            fine += rel < 1e-3;
            coarse += rel < 1e-2;
            worst = std::max(worst, rel);
        }
    const double secs = seconds_since(t0);
    const double share = double(fine) / double(idx);
    const bool ok = idx <= 5000 && share >= 0.95 && coarse == idx && secs < 120.0;
    report(5, ok, fmt("gradient: %.0f parameters, %.2f%% below 1e-3, worst %.2e, ", double(idx), 100 * share, worst) +
                      fmt("%.1f s", secs));
}

// ---------------------------------------------------------------------------
// end-to-end

PipelineConfig e2e_config()
{
    PipelineConfig cfg;
    cfg.sampler.k = 2;
    cfg.network.seed = 11;
    cfg.train.rounds = 2;
    cfg.train.seed = 5;
    cfg.train.learning_rate = 1e-4;
    cfg.train.max_epochs = 12;
    return cfg;
}

Corpus e2e_corpus()
{
    SyntheticConfig syn; // 200 images, 64x64, seed 1
    auto corpus = synthesize(syn);
    split_corpus(corpus, {}, 7);
    return corpus;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<fs::path> csv_files(const fs::path& root)
{
    std::vector<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.path().extension() == ".csv") out.push_back(fs::relative(e.path(), root));
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace

int main()
{
    log_level() = LogLevel::warn;
    criterion_sampler();
    criterion_otsu();
    criterion_oracles();
    criterion_metrics();
    criterion_gradient();

    const auto corpus = e2e_corpus();
    const auto cfg = e2e_config();
    const auto scratch = fs::temp_directory_path() / "nfanet_acceptance";
    fs::remove_all(scratch);

    auto t0 = Clock::now();
    RecursionOptions opt;
    opt.output_dir = scratch / "run_a";
    const auto res = run_recursion(corpus, cfg, opt);
    const double secs = seconds_since(t0);
    {
        bool constraint = true;
        for (const auto& rec : res.rounds) constraint = constraint && rec.constraint_satisfied;
        const auto& r1 = res.rounds.at(1);
        const auto& r2 = res.rounds.at(2);
        const double test_miou = r2.test_metrics->pooled.miou;
        const double train1 = r1.pseudo_label_quality->pooled.miou, train2 = r2.pseudo_label_quality->pooled.miou;
        const bool ok = constraint && test_miou >= 0.80 && train2 >= train1 - 0.02 && secs <= 900.0;
        for (const auto& rec : res.rounds)
            std::printf("  round %d: %zu epochs, pseudo-label mIoU %.4f fgIoU %.4f, test mIoU %.4f mDice %.4f\n",
                        rec.round_index, rec.stage.epochs.size(), rec.pseudo_label_quality->pooled.miou,
                        rec.pseudo_label_quality->pooled.fg_iou, rec.test_metrics->pooled.miou,
                        rec.test_metrics->pooled.mdice);
        report(6, ok,
               std::string("end-to-end: constraint ") + (constraint ? "held" : "violated") +
                   fmt(", test mIoU %.4f, train mIoU %.4f -> %.4f, %.0f s", test_miou, train1, train2, secs));
    }

    {
        const auto rep = ablation_aggregation(corpus, cfg, false, res.warmup_network.get());
        double best_single = 0.0, aggregated = -1.0;
        std::ostringstream d;
        for (const auto& row : rep.rows) {
            d << " " << row.key("features") << "=" << fmt("%.4f", row.scores.miou);
            if (row.key("features") == "aggregated")
                aggregated = row.scores.miou;
            else
                best_single = std::max(best_single, row.scores.miou);
        }
        report(7, aggregated >= best_single - 0.01,
               fmt("aggregation: aggregated %.4f vs best single %.4f (margin %+.4f);", aggregated, best_single,
                   aggregated - best_single) +
                   d.str());
    }

    {
        t0 = Clock::now();
        RecursionOptions again;
        again.output_dir = scratch / "run_b";
        run_recursion(corpus, cfg, again);
        const auto a = csv_files(scratch / "run_a"), b = csv_files(scratch / "run_b");
        bool same = !a.empty() && a == b;
        std::string first_diff;
        for (std::size_t i = 0; same && i < a.size(); ++i)
            if (slurp(scratch / "run_a" / a[i]) != slurp(scratch / "run_b" / a[i])) {
                same = false;
                first_diff = ", first difference in " + a[i].string() + " (runs kept in " + scratch.string() + ")";
            }
        report(8, same, "determinism: " + std::to_string(a.size()) + " metrics files compared byte-for-byte, " +
                            fmt("rerun %.0f s", seconds_since(t0)) + first_diff);
        if (same) fs::remove_all(scratch);
    }
    return failures == 0 ? 0 : 1;
}
