// SPDX-License-Identifier: Apache-2.0
//
// Corpus handling: point-label simulation, splits, padding, manifests and a
// synthetic water-body generator for desk-scale experiments.

#pragma once

#include <array>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "core.hpp"
#include "image_io.hpp"
#include "points.hpp"
#include "postprocess.hpp"

namespace nfanet {

enum class Split { train, val, test, unassigned };

inline const char* to_string(Split s)
{
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    default: return "unassigned";
    }
}

inline Split split_from_string(const std::string& s)
{
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    if (s == "unassigned" || s.empty()) return Split::unassigned;
    throw DataError("unknown split '" + s + "'");
}

struct CorpusItem {
    std::string id;
    ImageTensor image;
    std::optional<BinaryMask> mask;
    PointLabelSet points;
    Split split = Split::unassigned;
};

struct Corpus {
    std::vector<CorpusItem> items;
    int tile_rows = 0;
    int tile_cols = 0;

    std::vector<const CorpusItem*> select(Split s) const
    {
        std::vector<const CorpusItem*> out;
        for (const auto& it : items)
            if (it.split == s) out.push_back(&it);
        return out;
    }
};

// ---------------------------------------------------------------------------
// point labels

/// Chessboard distance of every component pixel to the nearest pixel outside
/// the component (the image border counts as outside).
inline Grid<int> inner_distance(const Grid<int>& labels, int id)
{
    Grid<int> dist(labels.rows(), labels.cols(), -1);
    std::deque<std::pair<int, int>> queue;
    for (int r = 0; r < labels.rows(); ++r)
        for (int c = 0; c < labels.cols(); ++c) {
            if (labels(r, c) != id) continue;
            bool edge = false;
            for (int dr = -1; dr <= 1 && !edge; ++dr)
                for (int dc = -1; dc <= 1 && !edge; ++dc)
                    if (!labels.contains(r + dr, c + dc) || labels(r + dr, c + dc) != id) edge = true;
            if (edge) {
                dist(r, c) = 1;
                queue.emplace_back(r, c);
            }
        }
    while (!queue.empty()) {
        auto [r, c] = queue.front();
        queue.pop_front();
        for (int dr = -1; dr <= 1; ++dr)
            for (int dc = -1; dc <= 1; ++dc) {
                const int y = r + dr, x = c + dc;
                if (!labels.contains(y, x) || labels(y, x) != id || dist(y, x) >= 0) continue;
                dist(y, x) = dist(r, c) + 1;
                queue.emplace_back(y, x);
            }
    }
    return dist;
}

/// One random fully-interior 5x5 square per 8-connected water component.
/// Components too thin for that get a square centred on their innermost
/// pixel (shifted inside the image) and are flagged as fallbacks.
inline PointLabelSet generate_point_labels(const BinaryMask& gt, std::uint64_t seed, const std::string& image_id = "")
{
    require_binary(gt, "generate_point_labels");
    PointLabelSet set;
    set.image_id = image_id;
    const auto comps = label_components(gt, 8, 1);
    std::mt19937_64 rng(seed);
    constexpr int half = point_side / 2;

    for (int id = 0; id < comps.count(); ++id) {
        std::vector<std::pair<int, int>> centres;
        for (int r = half; r + half < gt.rows(); ++r)
            for (int c = half; c + half < gt.cols(); ++c) {
                bool inside = true;
                for (int dr = -half; dr <= half && inside; ++dr)
                    for (int dc = -half; dc <= half && inside; ++dc)
                        inside = comps.labels(r + dr, c + dc) == id;
                if (inside) centres.emplace_back(r, c);
            }
        PointLabel p;
        if (!centres.empty()) {
            std::uniform_int_distribution<std::size_t> pick(0, centres.size() - 1);
            const auto [r, c] = centres[pick(rng)];
            p.row = r;
            p.col = c;
        } else {
            const auto dist = inner_distance(comps.labels, id);
            int best = -1;
            for (int r = 0; r < gt.rows(); ++r)
                for (int c = 0; c < gt.cols(); ++c)
                    if (dist(r, c) > best) {
                        best = dist(r, c);
                        p.row = r;
                        p.col = c;
                    }
            p.row = std::clamp(p.row, half, std::max(half, gt.rows() - 1 - half));
            p.col = std::clamp(p.col, half, std::max(half, gt.cols() - 1 - half));
            p.fallback = true;
        }
        set.points.push_back(p);
    }
    return set;
}

// ---------------------------------------------------------------------------
// splits

struct SplitFractions {
    double train = 0.6, val = 0.2, test = 0.2;
};

/// Deterministic shuffled partition; counts are round(n * fraction) for
/// train and val, the remainder goes to test.
inline void split_corpus(Corpus& corpus, const SplitFractions& f, std::uint64_t seed)
{
    if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
        throw ConfigError("split_corpus: fractions must be non-negative and sum to 1");
    const std::size_t n = corpus.items.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    const auto n_train = static_cast<std::size_t>(std::floor(n * f.train + 0.5));
    const auto n_val = std::min(n - std::min(n, n_train), static_cast<std::size_t>(std::floor(n * f.val + 0.5)));
    for (std::size_t k = 0; k < n; ++k) {
        auto& item = corpus.items[order[k]];
        item.split = k < n_train ? Split::train : k < n_train + n_val ? Split::val : Split::test;
    }
}

// ---------------------------------------------------------------------------
// padding

struct PadRecord {
    int rows = 0, cols = 0;             ///< original extent
    int pad_bottom = 0, pad_right = 0;
};

namespace detail {

/// Mirror index without repeating the edge sample (numpy "reflect").
inline int reflect_index(int i, int n)
{
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

inline int next_multiple(int v, int k) { return (v + k - 1) / k * k; }

} // namespace detail

template <typename T>
std::pair<Grid<T>, PadRecord> pad_to_multiple(const Grid<T>& g, int k)
{
    if (k < 1) throw ConfigError("pad_to_multiple: K must be >= 1");
    PadRecord rec{g.rows(), g.cols(), detail::next_multiple(g.rows(), k) - g.rows(),
                  detail::next_multiple(g.cols(), k) - g.cols()};
    Grid<T> out(g.rows() + rec.pad_bottom, g.cols() + rec.pad_right);
    for (int r = 0; r < out.rows(); ++r)
        for (int c = 0; c < out.cols(); ++c)
            out(r, c) = g(detail::reflect_index(r, g.rows()), detail::reflect_index(c, g.cols()));
    return {std::move(out), rec};
}

inline std::pair<ImageTensor, PadRecord> pad_to_multiple(const ImageTensor& img, int k)
{
    if (k < 1) throw ConfigError("pad_to_multiple: K must be >= 1");
    PadRecord rec{img.height(), img.width(), detail::next_multiple(img.height(), k) - img.height(),
                  detail::next_multiple(img.width(), k) - img.width()};
    ImageTensor out(img.height() + rec.pad_bottom, img.width() + rec.pad_right, img.channels());
    for (int r = 0; r < out.height(); ++r)
        for (int c = 0; c < out.width(); ++c)
            for (int ch = 0; ch < img.channels(); ++ch)
                out(r, c, ch) = img(detail::reflect_index(r, img.height()), detail::reflect_index(c, img.width()), ch);
    return {std::move(out), rec};
}

template <typename T>
Grid<T> unpad(const Grid<T>& g, const PadRecord& rec)
{
    return crop(g, rec.rows, rec.cols);
}

inline ImageTensor unpad(const ImageTensor& img, const PadRecord& rec)
{
    ImageTensor out(rec.rows, rec.cols, img.channels());
    for (int r = 0; r < rec.rows; ++r)
        for (int c = 0; c < rec.cols; ++c)
            for (int ch = 0; ch < img.channels(); ++ch) out(r, c, ch) = img(r, c, ch);
    return out;
}

// ---------------------------------------------------------------------------
// synthetic corpus

struct SyntheticConfig {
    int n_images = 200;
    int rows = 64;
    int cols = 64;
    int min_blobs = 1;
    int max_blobs = 3;
    double min_radius = 7.0;
    double max_radius = 13.0;
    std::array<double, 3> water_mean{0.12, 0.22, 0.40};
    double water_std = 0.015;
    std::array<double, 3> background_mean{0.42, 0.46, 0.30};
    double background_std = 0.08;
    /// amplitude of the smooth large-scale background variation
    double background_variation = 0.06;
    double noise_std = 0.01;
    std::uint64_t seed = 1;

    void validate() const
    {
        if (n_images < 0) throw ConfigError("SyntheticConfig: n_images must be >= 0");
        if (rows < 8 || cols < 8) throw ConfigError("SyntheticConfig: tiles must be at least 8x8");
        if (min_blobs < 0 || max_blobs < min_blobs) throw ConfigError("SyntheticConfig: invalid blob count range");
        // the radial profile keeps at least 0.65 r, which must hold a 5x5 square
        if (min_radius < 5.0 || max_radius < min_radius) throw ConfigError("SyntheticConfig: radii must satisfy 5 <= min <= max");
        if (2 * max_radius + 4 > std::min(rows, cols)) throw ConfigError("SyntheticConfig: blobs do not fit the tile");
        if (water_std < 0 || background_std < 0 || noise_std < 0 || background_variation < 0)
            throw ConfigError("SyntheticConfig: standard deviations must be >= 0");
    }
};

namespace detail {

struct Blob {
    double cy, cx, r0;
    std::array<double, 3> amp, phase;

    bool contains(double y, double x) const
    {
        const double dy = y - cy, dx = x - cx;
        const double theta = std::atan2(dy, dx);
        double r = r0;
        for (int k = 0; k < 3; ++k) r += r0 * amp[k] * std::cos((k + 2) * theta + phase[k]);
        return dy * dy + dx * dx <= r * r;
    }
};

} // namespace detail

/// Render one synthetic tile. Water blobs are star-shaped (hence connected),
/// never touch each other, and are smooth; the background is textured.
inline std::pair<ImageTensor, BinaryMask> synthesize_tile(const SyntheticConfig& cfg, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    BinaryMask mask(cfg.rows, cfg.cols, 0);
    std::uniform_int_distribution<int> nblobs(cfg.min_blobs, cfg.max_blobs);
    const int wanted = nblobs(rng);
    for (int b = 0; b < wanted; ++b) {
        for (int attempt = 0; attempt < 50; ++attempt) {
            detail::Blob blob;
            blob.r0 = cfg.min_radius + uni(rng) * (cfg.max_radius - cfg.min_radius);
            const double reach = blob.r0 * 1.35;
            blob.cy = reach + 1 + uni(rng) * std::max(0.0, cfg.rows - 3 - 2 * reach);
            blob.cx = reach + 1 + uni(rng) * std::max(0.0, cfg.cols - 3 - 2 * reach);
            for (int k = 0; k < 3; ++k) {
                blob.amp[k] = uni(rng) * 0.35 / 3.0;
                blob.phase[k] = uni(rng) * 2.0 * std::numbers::pi;
            }
            BinaryMask candidate(cfg.rows, cfg.cols, 0);
            for (int r = 0; r < cfg.rows; ++r)
                for (int c = 0; c < cfg.cols; ++c) candidate(r, c) = blob.contains(r, c) ? 1 : 0;
            // keep a background gap of at least two pixels between blobs
            const auto grown = dilate(mask, 2);
            bool clash = false;
            for (std::size_t i = 0; i < mask.size() && !clash; ++i) clash = candidate.values()[i] && grown.values()[i];
            if (clash) continue;
            for (std::size_t i = 0; i < mask.size(); ++i) mask.values()[i] |= candidate.values()[i];
            break;
        }
    }

    // low-frequency background field: a few random plane waves
    struct Wave {
        double fy, fx, phase, amp;
    };
    std::vector<Wave> waves;
    for (int k = 0; k < 4; ++k)
        waves.push_back({(uni(rng) - 0.5) * 0.3, (uni(rng) - 0.5) * 0.3, uni(rng) * 2 * std::numbers::pi,
                         cfg.background_variation * (0.5 + 0.5 * uni(rng))});

    ImageTensor img(cfg.rows, cfg.cols, 3);
    for (int r = 0; r < cfg.rows; ++r)
        for (int c = 0; c < cfg.cols; ++c) {
            const bool water = mask(r, c) == 1;
            double field = 0.0;
            for (const auto& w : waves) field += w.amp * std::sin(w.fy * r + w.fx * c + w.phase);
            const double shade = water ? cfg.water_std * gauss(rng) : cfg.background_std * gauss(rng);
            for (int ch = 0; ch < 3; ++ch) {
                double v = water ? cfg.water_mean[ch] + shade : cfg.background_mean[ch] + field + shade;
                v += cfg.noise_std * gauss(rng);
                // quantise to 8 bit so PNG round trips are exact
                img(r, c, ch) = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.f;
            }
        }
    return {std::move(img), std::move(mask)};
}

inline Corpus synthesize(const SyntheticConfig& cfg)
{
    cfg.validate();
    Corpus corpus;
    corpus.tile_rows = cfg.rows;
    corpus.tile_cols = cfg.cols;
    std::mt19937_64 master(cfg.seed);
    for (int i = 0; i < cfg.n_images; ++i) {
        std::mt19937_64 rng(master());
        CorpusItem item;
        char name[32];
        std::snprintf(name, sizeof(name), "syn_%05d", i);
        item.id = name;
        auto [img, mask] = synthesize_tile(cfg, rng);
        item.image = std::move(img);
        item.points = generate_point_labels(mask, rng(), item.id);
        item.mask = std::move(mask);
        corpus.items.push_back(std::move(item));
    }
    return corpus;
}

// ---------------------------------------------------------------------------
// manifest

/// Writes images/, masks/, points/ and manifest.json under dir.
inline void write_corpus(const Corpus& corpus, const std::filesystem::path& dir)
{
    namespace fs = std::filesystem;
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
    fs::create_directories(dir / "points");
    nlohmann::json items = nlohmann::json::array();
    for (const auto& it : corpus.items) {
        const std::string img = "images/" + it.id + ".png";
        const std::string pts = "points/" + it.id + ".json";
        io::write_image_png(it.image, (dir / img).string());
        save_points(it.points, (dir / pts).string());
        nlohmann::json entry = {{"image", img}, {"points", pts}, {"split", to_string(it.split)}};
        if (it.mask) {
            const std::string m = "masks/" + it.id + ".png";
            io::write_mask_png(*it.mask, (dir / m).string());
            entry["mask"] = m;
        } else {
            entry["mask"] = nullptr;
        }
        items.push_back(entry);
    }
    std::ofstream out(dir / "manifest.json");
    if (!out) throw IoError("cannot write manifest in " + dir.string());
    out << nlohmann::json{{"items", items}}.dump(2) << '\n';
}

inline Corpus load_corpus(const std::filesystem::path& manifest_path)
{
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open manifest " + manifest_path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(manifest_path.string() + ": " + e.what());
    }
    const auto base = manifest_path.parent_path();
    auto resolve = [&](const std::string& p) {
        const std::filesystem::path path(p);
        return (path.is_absolute() ? path : base / path).string();
    };
    Corpus corpus;
    try {
        for (const auto& e : j.at("items")) {
            CorpusItem item;
            const std::string img = e.at("image").get<std::string>();
            item.id = std::filesystem::path(img).stem().string();
            item.image = io::read_image(resolve(img));
            if (e.contains("mask") && !e["mask"].is_null()) item.mask = io::read_mask_png(resolve(e["mask"].get<std::string>()));
            if (e.contains("points") && !e["points"].is_null())
                item.points = load_points(resolve(e["points"].get<std::string>()));
            item.points.image_id = item.id;
            item.split = split_from_string(e.value("split", std::string("unassigned")));
            if (item.mask && (item.mask->rows() != item.image.height() || item.mask->cols() != item.image.width()))
                throw DataError(item.id + ": mask and image extents differ");
            item.points.validate(item.image.height(), item.image.width());
            if (corpus.items.empty()) {
                corpus.tile_rows = item.image.height();
                corpus.tile_cols = item.image.width();
            }
            corpus.items.push_back(std::move(item));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(manifest_path.string() + ": " + e.what());
    }
    return corpus;
}

} // namespace nfanet
