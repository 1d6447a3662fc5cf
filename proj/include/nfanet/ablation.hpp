// SPDX-License-Identifier: Apache-2.0
//
// Ablation harnesses: sampling factor sweep, aggregation vs single members,
// and per-round recursion curves. Each produces a flat table that is written
// as CSV plus a JSON document for plotting.

#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "trainer.hpp"

namespace nfanet {

struct AblationRow {
    std::vector<std::pair<std::string, std::string>> keys;
    Scores scores;

    std::string key(const std::string& name) const
    {
        for (const auto& [k, v] : keys)
            if (k == name) return v;
        return {};
    }
};

struct AblationReport {
    std::string name;
    std::vector<AblationRow> rows;

    const AblationRow* find(const std::vector<std::pair<std::string, std::string>>& match) const
    {
        for (const auto& r : rows) {
            bool ok = true;
            for (const auto& [k, v] : match) ok = ok && r.key(k) == v;
            if (ok) return &r;
        }
        return nullptr;
    }
};

inline void write_report_csv(const AblationReport& rep, const std::string& path)
{
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    if (rep.rows.empty()) return;
    for (const auto& [k, v] : rep.rows.front().keys) out << k << ',';
    out << "bgIoU,fgIoU,mIoU,bgDice,fgDice,mDice\n";
    char buf[160];
    for (const auto& r : rep.rows) {
        for (const auto& [k, v] : r.keys) out << v << ',';
        const auto& s = r.scores;
        std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", s.bg_iou, s.fg_iou, s.miou, s.bg_dice,
                      s.fg_dice, s.mdice);
        out << buf;
    }
}

inline nlohmann::json report_json(const AblationReport& rep)
{
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : rep.rows) {
        nlohmann::json j;
        for (const auto& [k, v] : r.keys) j[k] = v;
        j["bgIoU"] = r.scores.bg_iou;
        j["fgIoU"] = r.scores.fg_iou;
        j["mIoU"] = r.scores.miou;
        j["bgDice"] = r.scores.bg_dice;
        j["fgDice"] = r.scores.fg_dice;
        j["mDice"] = r.scores.mdice;
        rows.push_back(j);
    }
    return {{"ablation", rep.name}, {"rows", rows}};
}

inline void write_report_json(const AblationReport& rep, const std::string& path)
{
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << report_json(rep).dump(2) << '\n';
}

namespace detail {

inline void add_round_rows(AblationReport& rep, const std::vector<std::pair<std::string, std::string>>& base,
                           const RecursionResult& res)
{
    for (const auto& r : res.rounds) {
        auto keys = base;
        keys.emplace_back("round", std::to_string(r.round_index));
        if (r.pseudo_label_quality) {
            auto k = keys;
            k.emplace_back("set", "pseudo_label");
            rep.rows.push_back({k, r.pseudo_label_quality->pooled});
        }
        if (r.test_metrics) {
            auto k = keys;
            k.emplace_back("set", "test");
            rep.rows.push_back({k, r.test_metrics->pooled});
        }
    }
}

} // namespace detail

/// Full pipeline for every sampling factor. No trend is asserted.
inline AblationReport ablation_k(const Corpus& corpus, const std::vector<int>& ks, PipelineConfig cfg)
{
    AblationReport rep;
    rep.name = "k";
    for (int k : ks) {
        cfg.sampler.k = k;
        cfg.train.vote_threshold = 0;
        log_info("ablation_k: K=" + std::to_string(k));
        const auto res = run_recursion(corpus, cfg);
        detail::add_round_rows(rep, {{"K", std::to_string(k)}}, res);
    }
    return rep;
}

/// Single-member pseudo-labels f_1..f_L against the aggregated one, all from
/// the same warm-up network; optionally each followed by recursion.
/// Rows are keyed by `features` ("f1".."fL", "aggregated") and `recursion`.
inline AblationReport ablation_aggregation(const Corpus& corpus, PipelineConfig cfg, bool with_recursion,
                                           const FeatureExtractor<float>* warmup = nullptr)
{
    cfg.validate();
    std::unique_ptr<FeatureExtractor<float>> trained;
    if (!warmup) {
        auto warm_cfg = cfg;
        warm_cfg.train.rounds = 0;
        RecursionOptions opt;
        opt.evaluate_test = false;
        trained = run_recursion(corpus, warm_cfg, opt).warmup_network;
        warmup = trained.get();
    }

    std::vector<PreparedItem> items;
    for (const auto* item : corpus.select(Split::train)) items.push_back(prepare_item(*item, cfg));

    AblationReport rep;
    rep.name = "aggregation";
    const int members = cfg.sampler.members();
    for (int variant = 0; variant <= members; ++variant) {
        const int member = variant < members ? variant : -1;
        const std::string label = member >= 0 ? "f" + std::to_string(member + 1) : "aggregated";
        auto vcfg = cfg;
        vcfg.single_member = member;
        const auto labels = generate_pseudo_labels(*warmup, items, vcfg);
        if (const auto q = label_quality(labels, items)) rep.rows.push_back({{{"features", label}, {"recursion", "no"}}, q->pooled});
        if (with_recursion) {
            RecursionOptions opt;
            opt.warmup = warmup;
            opt.evaluate_test = false;
            const auto res = run_recursion(corpus, vcfg, opt);
            if (res.rounds.back().pseudo_label_quality)
                rep.rows.push_back({{{"features", label}, {"recursion", "yes"}}, res.rounds.back().pseudo_label_quality->pooled});
        }
    }
    return rep;
}

/// Per-round curves with neighbour sampling (configured K) and without (K=1).
inline AblationReport ablation_recursion(const Corpus& corpus, int rounds, PipelineConfig cfg)
{
    AblationReport rep;
    rep.name = "recursion";
    cfg.train.rounds = rounds;
    const int k = cfg.sampler.k;
    for (const bool ns : {true, false}) {
        auto vcfg = cfg;
        vcfg.sampler.k = ns ? k : 1;
        vcfg.train.vote_threshold = 0;
        const auto res = run_recursion(corpus, vcfg);
        detail::add_round_rows(rep, {{"variant", ns ? "NS" : "w/o NS"}}, res);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// repeated runs

struct ScoreSpread {
    Scores mean, stddev;
    int runs = 0;
};

/// Mean and sample standard deviation of each metric.
inline ScoreSpread spread(const std::vector<Scores>& runs)
{
    ScoreSpread out;
    out.runs = static_cast<int>(runs.size());
    if (runs.empty()) return out;
    auto fields = [](Scores& s) {
        return std::array<double*, 6>{&s.bg_iou, &s.fg_iou, &s.miou, &s.bg_dice, &s.fg_dice, &s.mdice};
    };
    out.mean = Scores{0, 0, 0, 0, 0, 0};
    out.stddev = Scores{0, 0, 0, 0, 0, 0};
    auto mean_f = fields(out.mean);
    auto sd_f = fields(out.stddev);
    for (auto s : runs) {
        auto f = fields(s);
        for (int i = 0; i < 6; ++i) *mean_f[i] += *f[i] / runs.size();
    }
    if (runs.size() > 1) {
        for (auto s : runs) {
            auto f = fields(s);
            for (int i = 0; i < 6; ++i) *sd_f[i] += (*f[i] - *mean_f[i]) * (*f[i] - *mean_f[i]) / (runs.size() - 1);
        }
        for (int i = 0; i < 6; ++i) *sd_f[i] = std::sqrt(*sd_f[i]);
    }
    return out;
}

} // namespace nfanet
