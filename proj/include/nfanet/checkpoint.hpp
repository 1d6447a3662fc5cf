// SPDX-License-Identifier: Apache-2.0
//
// Parameter checkpoint container. Little-endian throughout:
//
//   char[8]  magic "NFANCKPT"
//   u32      format version (1)
//   i32      depth, base_channels, in_channels, out_classes
//   u64      seed
//   u32      tensor count
//   per tensor:
//     u32    name length, then the name bytes (no terminator)
//     u32    rank, then rank x u32 dimensions
//     f32    row-major payload
//
// Tensors are the learnable parameters followed by the normalisation
// running statistics, in network order.

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>

#include "network.hpp"

namespace nfanet {

inline constexpr char checkpoint_magic[8] = {'N', 'F', 'A', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t checkpoint_version = 1;

namespace detail {

template <typename T>
void put(std::ostream& out, T v)
{
    static_assert(std::is_trivially_copyable_v<T>);
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in)
{
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError("checkpoint: unexpected end of file");
    return v;
}

} // namespace detail

template <typename S>
void save_checkpoint(FeatureExtractor<S>& net, const std::string& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path);
    const auto& cfg = net.config();
    out.write(checkpoint_magic, 8);
    detail::put<std::uint32_t>(out, checkpoint_version);
    detail::put<std::int32_t>(out, cfg.depth);
    detail::put<std::int32_t>(out, cfg.base_channels);
    detail::put<std::int32_t>(out, cfg.in_channels);
    detail::put<std::int32_t>(out, cfg.out_classes);
    detail::put<std::uint64_t>(out, cfg.seed);
    auto tensors = net.parameters();
    for (auto* b : net.buffers()) tensors.push_back(b);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto* t : tensors) {
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t->name.size()));
        out.write(t->name.data(), static_cast<std::streamsize>(t->name.size()));
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t->shape.size()));
        for (int d : t->shape) detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        for (S v : t->value) detail::put<float>(out, static_cast<float>(v));
    }
    if (!out) throw IoError("failed writing checkpoint " + path);
}

template <typename S = float>
std::unique_ptr<FeatureExtractor<S>> load_checkpoint(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, checkpoint_magic, 8) != 0) throw IoError(path + ": not a checkpoint");
    if (detail::get<std::uint32_t>(in) != checkpoint_version) throw IoError(path + ": unsupported checkpoint version");
    NetworkConfig cfg;
    cfg.depth = detail::get<std::int32_t>(in);
    cfg.base_channels = detail::get<std::int32_t>(in);
    cfg.in_channels = detail::get<std::int32_t>(in);
    cfg.out_classes = detail::get<std::int32_t>(in);
    cfg.seed = detail::get<std::uint64_t>(in);
    auto net = build<S>(cfg);
    auto tensors = net->parameters();
    for (auto* b : net->buffers()) tensors.push_back(b);
    if (detail::get<std::uint32_t>(in) != tensors.size()) throw IoError(path + ": tensor count mismatch");
    for (auto* t : tensors) {
        const auto len = detail::get<std::uint32_t>(in);
        std::string name(len, '\0');
        in.read(name.data(), len);
        if (name != t->name) throw IoError(path + ": expected tensor " + t->name + ", found " + name);
        const auto rank = detail::get<std::uint32_t>(in);
        if (rank != t->shape.size()) throw IoError(path + ": rank mismatch for " + name);
        for (int d : t->shape)
            if (detail::get<std::uint32_t>(in) != static_cast<std::uint32_t>(d)) throw IoError(path + ": shape mismatch for " + name);
        for (auto& v : t->value) v = static_cast<S>(detail::get<float>(in));
    }
    return net;
}

} // namespace nfanet
