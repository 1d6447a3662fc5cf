// SPDX-License-Identifier: Apache-2.0
//
// Point-supervised warm-up, pseudo-label generation and recursive
// pseudo-label retraining.
//
//   a. train on neighbour images with positive-only point supervision
//   b. pseudo-labels = upsample(postprocess(Vote(Otsu(CMax(features)))))
//   c. train on neighbour images against neighbour-sampled pseudo-labels
//   d. pseudo-labels = upsample(postprocess(mean member probability >= 0.5))
//   e. repeat c-d for the configured number of rounds

#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "aggregation.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "dataset.hpp"
#include "image_io.hpp"
#include "loss.hpp"
#include "metrics.hpp"
#include "neighbor_sampler.hpp"
#include "network.hpp"
#include "optimizer.hpp"
#include "postprocess.hpp"

namespace nfanet {

// ---------------------------------------------------------------------------
// logs and records

struct EpochLog {
    int epoch = 0;
    double mean_loss = 0.0;
    double learning_rate = 0.0;
    long steps = 0; ///< optimizer steps in this epoch
    bool improved = false;
    bool lr_halved = false;
};

struct StageLog {
    std::string name;
    std::vector<EpochLog> epochs;
    long total_steps = 0;
    bool early_stopped = false;
};

enum class LabelSource { aggregation, group_average, single_member };

inline const char* to_string(LabelSource s)
{
    switch (s) {
    case LabelSource::aggregation: return "aggregation";
    case LabelSource::group_average: return "group_average";
    default: return "single_member";
    }
}

struct RoundRecord {
    int round_index = 0;
    LabelSource pseudo_label_source = LabelSource::aggregation;
    StageLog stage;
    std::vector<BinaryMask> pseudo_labels; ///< train items, original extent
    std::vector<std::string> item_ids;
    std::optional<MetricReport> pseudo_label_quality; ///< vs ground truth, diagnostics
    std::optional<MetricReport> test_metrics;         ///< network after this round's training
    bool constraint_satisfied = true;
};

// ---------------------------------------------------------------------------
// augmentation

struct Augmentation {
    bool hflip = false, vflip = false, rot90 = false;
};

template <typename T>
Grid<T> apply_augmentation(const Grid<T>& g, const Augmentation& a)
{
    Grid<T> cur = g;
    if (a.hflip) {
        Grid<T> o(cur.rows(), cur.cols());
        for (int r = 0; r < cur.rows(); ++r)
            for (int c = 0; c < cur.cols(); ++c) o(r, c) = cur(r, cur.cols() - 1 - c);
        cur = std::move(o);
    }
    if (a.vflip) {
        Grid<T> o(cur.rows(), cur.cols());
        for (int r = 0; r < cur.rows(); ++r)
            for (int c = 0; c < cur.cols(); ++c) o(r, c) = cur(cur.rows() - 1 - r, c);
        cur = std::move(o);
    }
    if (a.rot90) { // counter-clockwise
        Grid<T> o(cur.cols(), cur.rows());
        for (int r = 0; r < o.rows(); ++r)
            for (int c = 0; c < o.cols(); ++c) o(r, c) = cur(c, cur.cols() - 1 - r);
        cur = std::move(o);
    }
    return cur;
}

inline ImageTensor apply_augmentation(const ImageTensor& img, const Augmentation& a)
{
    std::vector<Grid<float>> planes;
    for (int ch = 0; ch < img.channels(); ++ch) {
        Grid<float> p(img.height(), img.width());
        for (int r = 0; r < img.height(); ++r)
            for (int c = 0; c < img.width(); ++c) p(r, c) = img(r, c, ch);
        planes.push_back(apply_augmentation(p, a));
    }
    ImageTensor out(planes.front().rows(), planes.front().cols(), img.channels());
    for (int ch = 0; ch < img.channels(); ++ch)
        for (int r = 0; r < out.height(); ++r)
            for (int c = 0; c < out.width(); ++c) out(r, c, ch) = planes[ch](r, c);
    return out;
}

inline Augmentation draw_augmentation(const TrainConfig& cfg, bool square, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Augmentation a;
    a.hflip = u(rng) < cfg.hflip_prob;
    a.vflip = u(rng) < cfg.vflip_prob;
    a.rot90 = u(rng) < cfg.rot90_prob && square;
    return a;
}

// ---------------------------------------------------------------------------
// training

struct TrainingSample {
    ImageTensor image; ///< neighbour image
    BinaryMask target; ///< neighbour-sampled label
    std::optional<BinaryMask> negatives;
};

/// Runs one training stage with the configured early-stopping rule: the
/// learning rate halves each time `lr_halve_patience` further epochs pass
/// without improvement, and training stops after `stop_patience`.
template <typename S>
StageLog train_stage(FeatureExtractor<S>& net, const std::vector<TrainingSample>& samples, Supervision mode,
                     const TrainConfig& cfg, std::mt19937_64& rng, const std::string& name = "stage")
{
    cfg.validate();
    if (samples.empty()) throw DataError("train_stage: no training samples");
    for (const auto& s : samples)
        if (s.target.rows() != s.image.height() || s.target.cols() != s.image.width())
            throw DataError("train_stage: label extent does not match its image");

    StageLog stage_log;
    stage_log.name = name;
    Adam<S> adam(cfg.learning_rate, cfg.weight_decay);
    const auto params = net.parameters();
    double best = std::numeric_limits<double>::infinity();
    int bad_epochs = 0;
    bool warned_empty = false;

    std::vector<std::size_t> order(samples.size());
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

        EpochLog e;
        e.epoch = epoch;
        e.learning_rate = adam.learning_rate();
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            std::vector<ImageTensor> images;
            std::vector<BinaryMask> targets, negatives;
            bool any_negatives = false;
            for (std::size_t k = start; k < end; ++k) {
                const auto& s = samples[order[k]];
                const auto aug = draw_augmentation(cfg, s.image.height() == s.image.width(), rng);
                images.push_back(apply_augmentation(s.image, aug));
                targets.push_back(apply_augmentation(s.target, aug));
                if (s.negatives) {
                    negatives.push_back(apply_augmentation(*s.negatives, aug));
                    any_negatives = true;
                } else {
                    negatives.emplace_back(targets.back().rows(), targets.back().cols(), 0);
                }
            }
            net.zero_grad();
            const auto out = net.forward(to_batch<S>(images));
            const auto loss = compute_loss(out.logits, targets, mode, any_negatives ? &negatives : nullptr, true);
            if (loss.supervised_pixels == 0 && !warned_empty) {
                log_warn(name + ": batch without supervised pixels contributes zero loss");
                warned_empty = true;
            }
            net.backward(loss.grad);
            adam.step(params);
            loss_sum += loss.value;
            ++e.steps;
        }
        net.release();
        e.mean_loss = loss_sum / static_cast<double>(e.steps);
        stage_log.total_steps += e.steps;

        if (e.mean_loss < best - cfg.improvement_tolerance) {
            best = e.mean_loss;
            bad_epochs = 0;
            e.improved = true;
        } else {
            ++bad_epochs;
        }
        const bool stop = bad_epochs >= cfg.stop_patience;
        if (!stop && bad_epochs > 0 && bad_epochs % cfg.lr_halve_patience == 0) {
            adam.set_learning_rate(adam.learning_rate() / 2);
            e.lr_halved = true;
        }
        std::ostringstream msg;
        msg << name << " epoch " << epoch << " loss " << e.mean_loss << " lr " << e.learning_rate;
        log(LogLevel::debug, msg.str());
        stage_log.epochs.push_back(e);
        if (stop) {
            stage_log.early_stopped = true;
            break;
        }
    }
    return stage_log;
}

// ---------------------------------------------------------------------------
// per-image preparation

/// A corpus item padded and cut into its neighbour group.
struct PreparedItem {
    const CorpusItem* item = nullptr;
    PadRecord pad;
    NeighborGroup group;
    BinaryMask points_full;     ///< rasterised point squares, padded extent
    BinaryMask points_neighbor; ///< cell-wise OR of points_full
};

inline int padding_multiple(const PipelineConfig& cfg) { return cfg.sampler.k * cfg.network.size_multiple(); }

inline PreparedItem prepare_item(const CorpusItem& item, const PipelineConfig& cfg)
{
    PreparedItem p;
    p.item = &item;
    auto [padded, rec] = pad_to_multiple(item.image, padding_multiple(cfg));
    p.pad = rec;
    p.group = sample(padded, cfg.sampler);
    auto raster = rasterize(item.points, item.image.height(), item.image.width());
    // padded area never carries points
    BinaryMask full(padded.height(), padded.width(), 0);
    for (int r = 0; r < raster.rows(); ++r)
        for (int c = 0; c < raster.cols(); ++c) full(r, c) = raster(r, c);
    p.points_full = std::move(full);
    p.points_neighbor = downsample_any(p.points_full, cfg.sampler.k);
    return p;
}

inline MorphConfig neighbor_morph(const PipelineConfig& cfg, const PreparedItem& p)
{
    if (cfg.morph) return *cfg.morph;
    return MorphConfig::scaled_for(p.group.members.front().height(), p.group.members.front().width());
}

/// Upsample a neighbour-resolution label back to the original extent and
/// re-check the point constraint there (cropping can split components).
inline BinaryMask finish_label(const BinaryMask& neighbor_label, const PreparedItem& p, int k, int connectivity)
{
    const auto full = unpad(upsample_nearest(neighbor_label, k), p.pad);
    if (count_foreground(full) == 0) return full;
    return apply_point_constraint(full, rasterize(p.item->points, full.rows(), full.cols()), connectivity).mask;
}

/// Pseudo-label from the aggregated (or a single member's) features.
template <typename S>
BinaryMask aggregated_label(const FeatureExtractor<S>& net, const PreparedItem& p, const PipelineConfig& cfg,
                            int member = -1)
{
    const auto morph = neighbor_morph(cfg, p);
    const auto features = forward_group(net, p.group);
    BinaryMask voted;
    if (member < 0) {
        voted = aggregate(features, cfg.train.vote_threshold).mask;
    } else {
        voted = otsu_binarize(cmax_pool(features).maps.at(member)).mask;
    }
    const auto label = postprocess(voted, p.points_neighbor, morph);
    return finish_label(label.mask, p, cfg.sampler.k, morph.connectivity);
}

/// Probabilities are float32, so a mean within this distance of the
/// threshold is treated as a tie; ties go to foreground.
inline constexpr double probability_tie_tolerance = 1e-6;

/// Pixel-wise mean of the member probabilities, foreground where >= 0.5.
inline BinaryMask mean_probability_mask(const std::vector<Grid<float>>& probs)
{
    if (probs.empty()) throw ShapeError("mean_probability_mask: no members");
    for (const auto& pr : probs)
        if (!pr.same_shape(probs.front())) throw ShapeError("mean_probability_mask: member shapes differ");
    BinaryMask mask(probs.front().rows(), probs.front().cols(), 0);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        double s = 0.0;
        for (const auto& pr : probs) s += pr.values()[i];
        mask.values()[i] = s / static_cast<double>(probs.size()) >= 0.5 - probability_tie_tolerance ? 1 : 0;
    }
    return mask;
}

/// Pseudo-label from the member-averaged foreground probability.
template <typename S>
BinaryMask group_average_label(const FeatureExtractor<S>& net, const PreparedItem& p, const PipelineConfig& cfg)
{
    const auto morph = neighbor_morph(cfg, p);
    const auto out = forward_group_full(net, p.group);
    const auto label = postprocess(mean_probability_mask(out.probabilities), p.points_neighbor, morph);
    return finish_label(label.mask, p, cfg.sampler.k, morph.connectivity);
}

template <typename S>
std::vector<BinaryMask> generate_pseudo_labels(const FeatureExtractor<S>& net, const std::vector<PreparedItem>& items,
                                               const PipelineConfig& cfg)
{
    std::vector<BinaryMask> out;
    out.reserve(items.size());
    for (const auto& p : items) out.push_back(aggregated_label(net, p, cfg, cfg.single_member));
    return out;
}

template <typename S>
std::vector<BinaryMask> refresh_pseudo_labels(const FeatureExtractor<S>& net, const std::vector<PreparedItem>& items,
                                              const PipelineConfig& cfg)
{
    std::vector<BinaryMask> out;
    out.reserve(items.size());
    for (const auto& p : items) out.push_back(group_average_label(net, p, cfg));
    return out;
}

/// Full-resolution prediction: each member is predicted on its own and the
/// per-member masks are put back at their source pixels.
template <typename S>
BinaryMask predict_mask(const FeatureExtractor<S>& net, const ImageTensor& image, const PipelineConfig& cfg)
{
    auto [padded, rec] = pad_to_multiple(image, padding_multiple(cfg));
    const auto group = sample(padded, cfg.sampler);
    const auto out = forward_group_full(net, group);
    std::vector<BinaryMask> members;
    for (const auto& p : out.probabilities) {
        BinaryMask m(p.rows(), p.cols(), 0);
        for (std::size_t i = 0; i < m.size(); ++i) m.values()[i] = p.values()[i] >= 0.5f ? 1 : 0;
        members.push_back(std::move(m));
    }
    return unpad(reassemble_grid(members, cfg.sampler.k), rec);
}

// ---------------------------------------------------------------------------

inline std::vector<TrainingSample> point_samples(const std::vector<PreparedItem>& items, const PipelineConfig& cfg,
                                                 std::mt19937_64& rng)
{
    std::vector<TrainingSample> out;
    for (const auto& p : items) {
        const auto targets = sample_mask(p.points_full, cfg.sampler);
        for (int l = 0; l < p.group.size(); ++l) {
            TrainingSample s{p.group.members[l], targets[l], std::nullopt};
            if (cfg.train.random_background_negatives) {
                BinaryMask neg(s.target.rows(), s.target.cols(), 0);
                const auto wanted = count_foreground(s.target);
                std::uniform_int_distribution<std::size_t> pick(0, neg.size() - 1);
                for (std::size_t n = 0, tries = 0; n < wanted && tries < 100 * (wanted + 1); ++tries) {
                    const auto i = pick(rng);
                    if (s.target.values()[i] || neg.values()[i]) continue;
                    neg.values()[i] = 1;
                    ++n;
                }
                s.negatives = std::move(neg);
            }
            out.push_back(std::move(s));
        }
    }
    return out;
}

/// Labels are at the original extent; they are padded the same way as the
/// images before neighbour sampling.
inline std::vector<TrainingSample> label_samples(const std::vector<PreparedItem>& items,
                                                 const std::vector<BinaryMask>& labels, const PipelineConfig& cfg)
{
    if (labels.size() != items.size()) throw DataError("label_samples: one label per item required");
    std::vector<TrainingSample> out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& p = items[i];
        if (labels[i].rows() != p.pad.rows || labels[i].cols() != p.pad.cols)
            throw DataError("label_samples: label extent does not match image " + p.item->id);
        auto padded = pad_to_multiple(labels[i], padding_multiple(cfg)).first;
        const auto groups = sample_mask(padded, cfg.sampler);
        for (int l = 0; l < p.group.size(); ++l) out.push_back({p.group.members[l], groups[l], std::nullopt});
    }
    return out;
}

/// True when every foreground component intersects a point square.
inline bool satisfies_point_constraint(const BinaryMask& label, const PointLabelSet& points, int connectivity = 8)
{
    const auto comps = label_components(label, connectivity, 1);
    const auto raster = rasterize(points, label.rows(), label.cols());
    std::vector<bool> hit(comps.count(), false);
    for (std::size_t i = 0; i < label.size(); ++i)
        if (comps.labels.values()[i] >= 0 && raster.values()[i]) hit[comps.labels.values()[i]] = true;
    for (bool h : hit)
        if (!h) return false;
    return true;
}

// ---------------------------------------------------------------------------
// orchestration

struct RecursionResult {
    std::unique_ptr<FeatureExtractor<float>> network;
    std::unique_ptr<FeatureExtractor<float>> warmup_network;
    std::vector<RoundRecord> rounds;
};

struct RecursionOptions {
    /// Per-round artefacts are written below this directory when set.
    std::optional<std::filesystem::path> output_dir;
    bool evaluate_test = true;
    /// Reuse a trained warm-up network instead of running stage a.
    const FeatureExtractor<float>* warmup = nullptr;
};

namespace detail {

inline void write_stage_log(const StageLog& log, const std::filesystem::path& path,
                            const std::optional<RunMetadata>& meta = std::nullopt)
{
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    if (meta) out << "# seed=" << meta->seed << " round=" << meta->round << " config=" << meta->config_hash << '\n';
    out << "# " << log.name << " steps=" << log.total_steps << " early_stopped=" << (log.early_stopped ? 1 : 0) << '\n';
    out << "epoch,mean_loss,learning_rate,steps,improved,lr_halved\n";
    char buf[160];
    for (const auto& e : log.epochs) {
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%ld,%d,%d\n", e.epoch, e.mean_loss, e.learning_rate, e.steps,
                      e.improved ? 1 : 0, e.lr_halved ? 1 : 0);
        out << buf;
    }
}

inline void persist_round(const RoundRecord& rec, FeatureExtractor<float>& net, const std::filesystem::path& dir,
                          const RunMetadata& meta)
{
    namespace fs = std::filesystem;
    const fs::path round_dir = dir / ("round" + std::to_string(rec.round_index));
    fs::create_directories(round_dir / "pseudo_labels");
    save_checkpoint(net, (round_dir / "checkpoint.bin").string());
    for (std::size_t i = 0; i < rec.pseudo_labels.size(); ++i)
        io::write_mask_png(rec.pseudo_labels[i], (round_dir / "pseudo_labels" / (rec.item_ids[i] + ".png")).string());
    if (rec.pseudo_label_quality) write_metrics_csv(*rec.pseudo_label_quality, (round_dir / "metrics.csv").string());
    if (rec.test_metrics) write_metrics_csv(*rec.test_metrics, (round_dir / "test_metrics.csv").string());
    write_stage_log(rec.stage, round_dir / "log.txt", meta);
}

} // namespace detail

inline std::optional<MetricReport> label_quality(const std::vector<BinaryMask>& labels,
                                                 const std::vector<PreparedItem>& items)
{
    std::vector<BinaryMask> preds, gts;
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (!items[i].item->mask) continue;
        preds.push_back(labels[i]);
        gts.push_back(*items[i].item->mask);
        ids.push_back(items[i].item->id);
    }
    if (preds.empty()) return std::nullopt;
    return metrics(preds, gts, ids);
}

template <typename S>
std::optional<MetricReport> evaluate_split(const FeatureExtractor<S>& net, const Corpus& corpus, Split split,
                                           const PipelineConfig& cfg)
{
    std::vector<BinaryMask> preds, gts;
    std::vector<std::string> ids;
    for (const auto* item : corpus.select(split)) {
        if (!item->mask) continue;
        preds.push_back(predict_mask(net, item->image, cfg));
        gts.push_back(*item->mask);
        ids.push_back(item->id);
    }
    if (preds.empty()) return std::nullopt;
    return metrics(preds, gts, ids);
}

/// a -> b -> (c -> d) x rounds on the train split.
inline RecursionResult run_recursion(const Corpus& corpus, const PipelineConfig& cfg, const RecursionOptions& opt = {})
{
    cfg.validate();
    std::vector<PreparedItem> items;
    for (const auto* item : corpus.select(Split::train)) {
        if (item->image.channels() != cfg.network.in_channels)
            throw DataError(item->id + ": image channels do not match the network");
        items.push_back(prepare_item(*item, cfg));
    }
    if (items.empty()) throw DataError("run_recursion: the corpus has no train items");

    std::vector<std::string> ids;
    for (const auto& p : items) ids.push_back(p.item->id);
    std::mt19937_64 rng(cfg.train.seed);
    RecursionResult result;
    const std::string hash = config_hash(cfg);

    auto finish_round = [&](RoundRecord& rec, std::vector<BinaryMask> labels) {
        rec.item_ids = ids;
        rec.pseudo_labels = std::move(labels);
        for (std::size_t i = 0; i < items.size(); ++i)
            if (!satisfies_point_constraint(rec.pseudo_labels[i], items[i].item->points)) rec.constraint_satisfied = false;
        rec.pseudo_label_quality = label_quality(rec.pseudo_labels, items);
        if (opt.evaluate_test) rec.test_metrics = evaluate_split(*result.network, corpus, Split::test, cfg);
        const RunMetadata meta{cfg.train.seed, rec.round_index, hash};
        if (rec.pseudo_label_quality) rec.pseudo_label_quality->run = meta;
        if (rec.test_metrics) rec.test_metrics->run = meta;
        if (opt.output_dir) detail::persist_round(rec, *result.network, *opt.output_dir, meta);
        std::ostringstream msg;
        msg << "round " << rec.round_index << " (" << to_string(rec.pseudo_label_source) << ")";
        if (rec.pseudo_label_quality) msg << " pseudo-label mIoU " << rec.pseudo_label_quality->pooled.miou;
        if (rec.test_metrics) msg << " test mIoU " << rec.test_metrics->pooled.miou;
        log_info(msg.str());
    };

    // a + b
    RoundRecord first;
    first.round_index = 0;
    first.pseudo_label_source = cfg.single_member < 0 ? LabelSource::aggregation : LabelSource::single_member;
    if (opt.warmup) {
        result.network = opt.warmup->clone();
        first.stage.name = "warmup (reused)";
    } else {
        result.network = build<float>(cfg.network);
        first.stage = train_stage(*result.network, point_samples(items, cfg, rng), Supervision::point_positive_only,
                                  cfg.train, rng, "warmup");
    }
    result.warmup_network = result.network->clone();
    finish_round(first, generate_pseudo_labels(*result.network, items, cfg));
    result.rounds.push_back(std::move(first));

    // (c + d) x rounds
    for (int r = 1; r <= cfg.train.rounds; ++r) {
        RoundRecord rec;
        rec.round_index = r;
        rec.pseudo_label_source = LabelSource::group_average;
        rec.stage = train_stage(*result.network, label_samples(items, result.rounds.back().pseudo_labels, cfg),
                                Supervision::dense, cfg.train, rng, "round" + std::to_string(r));
        finish_round(rec, refresh_pseudo_labels(*result.network, items, cfg));
        result.rounds.push_back(std::move(rec));
    }
    return result;
}

} // namespace nfanet
