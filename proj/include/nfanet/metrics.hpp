// SPDX-License-Identifier: Apache-2.0
//
// IoU / Dice family for binary water masks.
//
// For orientation: on real 492x492 satellite tiles a UNet extractor reaches
// roughly 79 test mIoU and 88 mDice. Synthetic runs are not comparable.

#pragma once

#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "core.hpp"

namespace nfanet {

struct Confusion {
    long long tp = 0, fp = 0, fn = 0, tn = 0;

    long long total() const noexcept { return tp + fp + fn + tn; }
    Confusion& operator+=(const Confusion& o) noexcept
    {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }
    friend bool operator==(const Confusion&, const Confusion&) = default;
};

inline Confusion confusion(const BinaryMask& pred, const BinaryMask& gt)
{
    if (!pred.same_shape(gt)) throw ShapeError("confusion: prediction and ground truth extents differ");
    require_binary(pred, "confusion");
    require_binary(gt, "confusion");
    Confusion c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred.values()[i], g = gt.values()[i];
        if (p && g) ++c.tp;
        else if (p) ++c.fp;
        else if (g) ++c.fn;
        else ++c.tn;
    }
    return c;
}

struct Scores {
    double bg_iou = 1, fg_iou = 1, miou = 1, bg_dice = 1, fg_dice = 1, mdice = 1;
};

/// A class absent from both prediction and ground truth scores 1.
inline Scores scores_from(const Confusion& c)
{
    auto ratio = [](double num, double den) { return den > 0 ? num / den : 1.0; };
    Scores s;
    s.fg_iou = ratio(double(c.tp), double(c.tp + c.fp + c.fn));
    s.bg_iou = ratio(double(c.tn), double(c.tn + c.fp + c.fn));
    s.fg_dice = ratio(2.0 * c.tp, 2.0 * c.tp + c.fp + c.fn);
    s.bg_dice = ratio(2.0 * c.tn, 2.0 * c.tn + c.fp + c.fn);
    s.miou = (s.bg_iou + s.fg_iou) / 2;
    s.mdice = (s.bg_dice + s.fg_dice) / 2;
    return s;
}

enum class Pooling { per_image_mean, corpus_pooled };

/// Which run produced a report. Kept out of the metrics CSV, whose columns are
/// fixed; run logs carry it instead.
struct RunMetadata {
    std::uint64_t seed = 0;
    int round = 0;
    std::string config_hash;
};

struct MetricReport {
    std::vector<std::string> image_ids;
    std::vector<Scores> per_image;
    Scores per_image_mean;
    Scores pooled;
    Confusion totals;
    std::optional<RunMetadata> run;

    const Scores& summary(Pooling p) const { return p == Pooling::corpus_pooled ? pooled : per_image_mean; }
};

inline MetricReport metrics(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts,
                            std::vector<std::string> ids = {})
{
    if (preds.size() != gts.size()) throw ShapeError("metrics: prediction and ground-truth lists differ in length");
    if (preds.empty()) throw DataError("metrics: empty corpus");
    if (ids.empty())
        for (std::size_t i = 0; i < preds.size(); ++i) ids.push_back(std::to_string(i));
    if (ids.size() != preds.size()) throw ShapeError("metrics: id list length mismatch");

    MetricReport r;
    r.image_ids = std::move(ids);
    Scores sum{0, 0, 0, 0, 0, 0};
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const auto c = confusion(preds[i], gts[i]);
        r.totals += c;
        const auto s = scores_from(c);
        r.per_image.push_back(s);
        sum.bg_iou += s.bg_iou;
        sum.fg_iou += s.fg_iou;
        sum.bg_dice += s.bg_dice;
        sum.fg_dice += s.fg_dice;
    }
    const double n = static_cast<double>(preds.size());
    r.per_image_mean.bg_iou = sum.bg_iou / n;
    r.per_image_mean.fg_iou = sum.fg_iou / n;
    r.per_image_mean.bg_dice = sum.bg_dice / n;
    r.per_image_mean.fg_dice = sum.fg_dice / n;
    r.per_image_mean.miou = (r.per_image_mean.bg_iou + r.per_image_mean.fg_iou) / 2;
    r.per_image_mean.mdice = (r.per_image_mean.bg_dice + r.per_image_mean.fg_dice) / 2;
    r.pooled = scores_from(r.totals);
    return r;
}

inline std::string format_scores(const std::string& id, const Scores& s)
{
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", id.c_str(), s.bg_iou, s.fg_iou, s.miou,
                  s.bg_dice, s.fg_dice, s.mdice);
    return buf;
}

inline constexpr const char* metrics_csv_header = "image_id,bgIoU,fgIoU,mIoU,bgDice,fgDice,mDice";

/// Per-image rows followed by `__mean__` (per-image mean) and `__pooled__`
/// (corpus-pooled counts) summary rows.
inline void write_metrics_csv(const MetricReport& r, const std::string& path)
{
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << metrics_csv_header << '\n';
    for (std::size_t i = 0; i < r.per_image.size(); ++i) out << format_scores(r.image_ids[i], r.per_image[i]) << '\n';
    out << format_scores("__mean__", r.per_image_mean) << '\n';
    out << format_scores("__pooled__", r.pooled) << '\n';
}

} // namespace nfanet
