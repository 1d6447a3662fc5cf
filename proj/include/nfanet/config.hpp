// SPDX-License-Identifier: Apache-2.0
//
// Run configuration and its JSON form. Run-config files mirror these structs
// field for field; unknown keys are rejected so typos do not pass silently.

#pragma once

#include <cstdint>
#include <cstdio>
#include <optional>
#include <set>
#include <string>

#include <json.hpp>

#include "neighbor_sampler.hpp"
#include "network.hpp"
#include "postprocess.hpp"

namespace nfanet {

struct TrainConfig {
    int batch_size = 4;
    double learning_rate = 1e-4;
    double weight_decay = 1e-3;
    int lr_halve_patience = 3;
    int stop_patience = 6;
    int max_epochs = 100;
    double hflip_prob = 0.5;
    double vflip_prob = 0.5;
    double rot90_prob = 0.5;
    int rounds = 3;
    /// <= 0 selects ceil(L/2)
    int vote_threshold = 0;
    std::uint64_t seed = 0;
    /// Add as many random non-point pixels as negatives in the warm-up stage.
    bool random_background_negatives = false;
    /// An epoch improves only if its mean loss drops below best - this.
    double improvement_tolerance = 1e-6;

    void validate() const
    {
        if (batch_size < 1 || learning_rate <= 0 || weight_decay < 0 || lr_halve_patience < 1 || stop_patience < 1 ||
            max_epochs < 1 || rounds < 0)
            throw ConfigError("TrainConfig: batch size, learning rate, patience and epoch limits must be positive");
        for (double p : {hflip_prob, vflip_prob, rot90_prob})
            if (p < 0 || p > 1) throw ConfigError("TrainConfig: augmentation probabilities must lie in [0,1]");
    }
};

/// Everything a pipeline run needs.
struct PipelineConfig {
    SamplerConfig sampler;
    NetworkConfig network;
    TrainConfig train;
    /// Morphology at neighbour resolution; unset means MorphConfig::scaled_for.
    std::optional<MorphConfig> morph;
    /// -1 aggregates all members; l >= 0 takes member l alone (ablation).
    int single_member = -1;

    void validate() const
    {
        sampler.validate();
        network.validate();
        train.validate();
        if (morph) morph->validate();
        if (single_member >= sampler.members()) throw ConfigError("single_member exceeds the group size");
    }
};

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const char* what)
{
    if (!j.is_object()) throw ConfigError(std::string(what) + ": expected an object");
    for (const auto& [key, value] : j.items())
        if (!known.count(key)) throw ConfigError(std::string(what) + ": unknown key '" + key + "'");
}

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& field)
{
    if (!j.contains(key)) return;
    try {
        field = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

} // namespace detail

inline nlohmann::json to_json(const SamplerConfig& c) { return {{"k", c.k}}; }

inline nlohmann::json to_json(const NetworkConfig& c)
{
    return {{"depth", c.depth}, {"base_channels", c.base_channels}, {"in_channels", c.in_channels},
            {"out_classes", c.out_classes}, {"seed", c.seed}};
}

inline nlohmann::json to_json(const MorphConfig& c)
{
    return {{"open_radius", c.open_radius}, {"max_hole_area", c.max_hole_area}, {"connectivity", c.connectivity}};
}

inline nlohmann::json to_json(const TrainConfig& c)
{
    return {{"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"weight_decay", c.weight_decay},
            {"lr_halve_patience", c.lr_halve_patience},
            {"stop_patience", c.stop_patience},
            {"max_epochs", c.max_epochs},
            {"hflip_prob", c.hflip_prob},
            {"vflip_prob", c.vflip_prob},
            {"rot90_prob", c.rot90_prob},
            {"rounds", c.rounds},
            {"vote_threshold", c.vote_threshold},
            {"seed", c.seed},
            {"random_background_negatives", c.random_background_negatives},
            {"improvement_tolerance", c.improvement_tolerance}};
}

inline nlohmann::json to_json(const PipelineConfig& c)
{
    nlohmann::json j{{"sampler", to_json(c.sampler)},
                     {"network", to_json(c.network)},
                     {"train", to_json(c.train)},
                     {"single_member", c.single_member}};
    j["morph"] = c.morph ? to_json(*c.morph) : nlohmann::json(nullptr);
    return j;
}

inline SamplerConfig sampler_config_from_json(const nlohmann::json& j)
{
    detail::reject_unknown(j, {"k"}, "sampler");
    SamplerConfig c;
    detail::read_field(j, "k", c.k);
    return c;
}

inline NetworkConfig network_config_from_json(const nlohmann::json& j)
{
    detail::reject_unknown(j, {"depth", "base_channels", "in_channels", "out_classes", "seed"}, "network");
    NetworkConfig c;
    detail::read_field(j, "depth", c.depth);
    detail::read_field(j, "base_channels", c.base_channels);
    detail::read_field(j, "in_channels", c.in_channels);
    detail::read_field(j, "out_classes", c.out_classes);
    detail::read_field(j, "seed", c.seed);
    return c;
}

inline MorphConfig morph_config_from_json(const nlohmann::json& j)
{
    detail::reject_unknown(j, {"open_radius", "max_hole_area", "connectivity"}, "morph");
    MorphConfig c;
    detail::read_field(j, "open_radius", c.open_radius);
    detail::read_field(j, "max_hole_area", c.max_hole_area);
    detail::read_field(j, "connectivity", c.connectivity);
    return c;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j)
{
    detail::reject_unknown(j,
                           {"batch_size", "learning_rate", "weight_decay", "lr_halve_patience", "stop_patience",
                            "max_epochs", "hflip_prob", "vflip_prob", "rot90_prob", "rounds", "vote_threshold", "seed",
                            "random_background_negatives", "improvement_tolerance"},
                           "train");
    TrainConfig c;
    detail::read_field(j, "batch_size", c.batch_size);
    detail::read_field(j, "learning_rate", c.learning_rate);
    detail::read_field(j, "weight_decay", c.weight_decay);
    detail::read_field(j, "lr_halve_patience", c.lr_halve_patience);
    detail::read_field(j, "stop_patience", c.stop_patience);
    detail::read_field(j, "max_epochs", c.max_epochs);
    detail::read_field(j, "hflip_prob", c.hflip_prob);
    detail::read_field(j, "vflip_prob", c.vflip_prob);
    detail::read_field(j, "rot90_prob", c.rot90_prob);
    detail::read_field(j, "rounds", c.rounds);
    detail::read_field(j, "vote_threshold", c.vote_threshold);
    detail::read_field(j, "seed", c.seed);
    detail::read_field(j, "random_background_negatives", c.random_background_negatives);
    detail::read_field(j, "improvement_tolerance", c.improvement_tolerance);
    return c;
}

/// Missing sections keep their defaults. `extra_keys` lists additional
/// top-level keys the caller handles itself (run id, corpus path, ...).
inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j, const std::set<std::string>& extra_keys = {})
{
    std::set<std::string> known{"sampler", "network", "train", "morph", "single_member"};
    known.insert(extra_keys.begin(), extra_keys.end());
    detail::reject_unknown(j, known, "run config");
    PipelineConfig c;
    if (j.contains("sampler")) c.sampler = sampler_config_from_json(j.at("sampler"));
    if (j.contains("network")) c.network = network_config_from_json(j.at("network"));
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    if (j.contains("morph") && !j.at("morph").is_null()) c.morph = morph_config_from_json(j.at("morph"));
    detail::read_field(j, "single_member", c.single_member);
    c.validate();
    return c;
}

/// FNV-1a over the canonical (sorted-key, compact) JSON form, as 16 hex digits.
inline std::string config_hash(const PipelineConfig& c)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : to_json(c).dump()) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace nfanet
