// SPDX-License-Identifier: Apache-2.0
//
// 8-bit PNG and NumPy .npy reading/writing.

#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include "core.hpp"

namespace nfanet::io {

// ---------------------------------------------------------------------------
// PNG

/// Raw 8-bit pixels, HWC.
struct Raster8 {
    int height = 0, width = 0, channels = 0;
    std::vector<std::uint8_t> pixels;
};

inline Raster8 read_png_raw(const std::string& path)
{
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw IoError("cannot read PNG " + path + ": " + image.message);
    const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
    image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    Raster8 r;
    r.height = static_cast<int>(image.height);
    r.width = static_cast<int>(image.width);
    r.channels = color ? 3 : 1;
    r.pixels.resize(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, r.pixels.data(), 0, nullptr)) {
        png_image_free(&image);
        throw IoError("cannot decode PNG " + path + ": " + image.message);
    }
    return r;
}

inline void write_png_raw(const Raster8& r, const std::string& path)
{
    if (r.channels != 1 && r.channels != 3) throw IoError("write_png: only 1 or 3 channels supported");
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(r.width);
    image.height = static_cast<png_uint_32>(r.height);
    image.format = r.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.c_str(), 0, r.pixels.data(), 0, nullptr))
        throw IoError("cannot write PNG " + path + ": " + image.message);
}

inline std::uint8_t to_byte(float v)
{
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.f, 1.f) * 255.f));
}

/// Images are normalised to [0,1] by /255.
inline ImageTensor read_image_png(const std::string& path)
{
    const auto r = read_png_raw(path);
    ImageTensor img(r.height, r.width, r.channels);
    for (std::size_t i = 0; i < r.pixels.size(); ++i) img.values()[i] = r.pixels[i] / 255.f;
    return img;
}

inline void write_image_png(const ImageTensor& img, const std::string& path)
{
    Raster8 r{img.height(), img.width(), img.channels(), {}};
    r.pixels.resize(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) r.pixels[i] = to_byte(img.values()[i]);
    write_png_raw(r, path);
}

/// Masks: single-channel {0,255}; any non-zero byte reads as foreground.
inline BinaryMask read_mask_png(const std::string& path)
{
    const auto r = read_png_raw(path);
    BinaryMask m(r.height, r.width, 0);
    for (int y = 0; y < r.height; ++y)
        for (int x = 0; x < r.width; ++x) m(y, x) = r.pixels[(static_cast<std::size_t>(y) * r.width + x) * r.channels] ? 1 : 0;
    return m;
}

inline void write_mask_png(const BinaryMask& m, const std::string& path)
{
    Raster8 r{m.rows(), m.cols(), 1, {}};
    r.pixels.resize(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) r.pixels[i] = m.values()[i] ? 255 : 0;
    write_png_raw(r, path);
}

/// Real map linearly stretched over its [min, max] to 0..255.
inline void write_map_png(const RealMap& map, const std::string& path)
{
    double lo = 0, hi = 0;
    if (!map.empty()) {
        lo = *std::min_element(map.values().begin(), map.values().end());
        hi = *std::max_element(map.values().begin(), map.values().end());
    }
    Raster8 r{map.rows(), map.cols(), 1, {}};
    r.pixels.resize(map.size());
    for (std::size_t i = 0; i < map.size(); ++i)
        r.pixels[i] = hi > lo ? to_byte(static_cast<float>((map.values()[i] - lo) / (hi - lo))) : 0;
    write_png_raw(r, path);
}

// ---------------------------------------------------------------------------
// NPY (version 1.0, C order, little-endian float32/float64/uint8)

struct NpyArray {
    std::vector<std::size_t> shape;
    std::vector<double> values;

    std::size_t count() const
    {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        return n;
    }
};

inline NpyArray read_npy(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    char magic[6];
    in.read(magic, 6);
    if (!in || std::memcmp(magic, "\x93NUMPY", 6) != 0) throw IoError(path + ": not an npy file");
    unsigned char ver[2];
    in.read(reinterpret_cast<char*>(ver), 2);
    std::uint32_t header_len = 0;
    if (ver[0] == 1) {
        unsigned char b[2];
        in.read(reinterpret_cast<char*>(b), 2);
        header_len = b[0] | (b[1] << 8);
    } else {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        header_len = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }
    std::string header(header_len, ' ');
    in.read(header.data(), header_len);
    if (!in) throw IoError(path + ": truncated header");

    auto field = [&](const std::string& key) {
        const auto k = header.find("'" + key + "'");
        if (k == std::string::npos) throw IoError(path + ": header lacks " + key);
        return header.substr(header.find(':', k) + 1);
    };
    const std::string descr_part = field("descr");
    const auto q1 = descr_part.find('\'');
    const std::string descr = descr_part.substr(q1 + 1, descr_part.find('\'', q1 + 1) - q1 - 1);
    if (field("fortran_order").find("True") < field("fortran_order").find(','))
        throw IoError(path + ": fortran order arrays are not supported");
    const std::string shape_part = field("shape");
    const std::string dims = shape_part.substr(shape_part.find('(') + 1, shape_part.find(')') - shape_part.find('(') - 1);

    NpyArray arr;
    std::size_t pos = 0;
    while (pos < dims.size()) {
        const auto comma = dims.find(',', pos);
        const std::string tok = dims.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        if (tok.find_first_of("0123456789") != std::string::npos) arr.shape.push_back(std::stoul(tok));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    const std::size_t n = arr.count();
    arr.values.resize(n);
    if (descr == "<f4") {
        std::vector<float> buf(n);
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * 4));
        std::copy(buf.begin(), buf.end(), arr.values.begin());
    } else if (descr == "<f8") {
        in.read(reinterpret_cast<char*>(arr.values.data()), static_cast<std::streamsize>(n * 8));
    } else if (descr == "|u1" || descr == "<u1") {
        std::vector<std::uint8_t> buf(n);
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
        std::copy(buf.begin(), buf.end(), arr.values.begin());
    } else {
        throw IoError(path + ": unsupported dtype " + descr);
    }
    if (!in) throw IoError(path + ": truncated payload");
    return arr;
}

inline void write_npy_f32(const std::string& path, const std::vector<std::size_t>& shape, const std::vector<float>& data)
{
    std::string dims;
    for (std::size_t i = 0; i < shape.size(); ++i) dims += (i ? ", " : "") + std::to_string(shape[i]);
    if (shape.size() == 1) dims += ",";
    std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" + dims + "), }";
    const std::size_t total = 10 + header.size() + 1;
    header.append((64 - total % 64) % 64, ' ');
    header.push_back('\n');
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out.write("\x93NUMPY\x01\x00", 8);
    const std::uint16_t len = static_cast<std::uint16_t>(header.size());
    const unsigned char lb[2] = {static_cast<unsigned char>(len & 0xff), static_cast<unsigned char>(len >> 8)};
    out.write(reinterpret_cast<const char*>(lb), 2);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * 4));
}

/// H x W [x C] array, values expected in [0,1].
inline ImageTensor read_image_npy(const std::string& path)
{
    const auto a = read_npy(path);
    if (a.shape.size() != 2 && a.shape.size() != 3) throw IoError(path + ": expected an H x W [x C] array");
    const int c = a.shape.size() == 3 ? static_cast<int>(a.shape[2]) : 1;
    ImageTensor img(static_cast<int>(a.shape[0]), static_cast<int>(a.shape[1]), c);
    for (std::size_t i = 0; i < a.values.size(); ++i) img.values()[i] = static_cast<float>(a.values[i]);
    return img;
}

inline void write_image_npy(const ImageTensor& img, const std::string& path)
{
    write_npy_f32(path,
                  {static_cast<std::size_t>(img.height()), static_cast<std::size_t>(img.width()),
                   static_cast<std::size_t>(img.channels())},
                  img.values());
}

/// Feature stacks are stored as H x W x C x L float32.
inline void write_features_npy(const FeatureStack& f, const std::string& path)
{
    std::vector<float> buf(f.values().size());
    std::size_t o = 0;
    for (int i = 0; i < f.rows(); ++i)
        for (int j = 0; j < f.cols(); ++j)
            for (int c = 0; c < f.channels(); ++c)
                for (int l = 0; l < f.members(); ++l) buf[o++] = f(i, j, c, l);
    write_npy_f32(path,
                  {static_cast<std::size_t>(f.rows()), static_cast<std::size_t>(f.cols()),
                   static_cast<std::size_t>(f.channels()), static_cast<std::size_t>(f.members())},
                  buf);
}

inline FeatureStack read_features_npy(const std::string& path)
{
    const auto a = read_npy(path);
    if (a.shape.size() != 4) throw IoError(path + ": expected an H x W x C x L array");
    FeatureStack f(static_cast<int>(a.shape[0]), static_cast<int>(a.shape[1]), static_cast<int>(a.shape[2]),
                   static_cast<int>(a.shape[3]));
    std::size_t o = 0;
    for (int i = 0; i < f.rows(); ++i)
        for (int j = 0; j < f.cols(); ++j)
            for (int c = 0; c < f.channels(); ++c)
                for (int l = 0; l < f.members(); ++l) f(i, j, c, l) = static_cast<float>(a.values[o++]);
    return f;
}

inline bool has_extension(const std::string& path, const std::string& ext)
{
    return path.size() >= ext.size() && path.compare(path.size() - ext.size(), ext.size(), ext) == 0;
}

inline ImageTensor read_image(const std::string& path)
{
    return has_extension(path, ".npy") ? read_image_npy(path) : read_image_png(path);
}

} // namespace nfanet::io
