// SPDX-License-Identifier: Apache-2.0
//
// Basic value types shared by every stage of the pipeline: dense 2-D grids,
// multi-channel images, binary masks and the error hierarchy.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace nfanet {

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// logging

enum class LogLevel { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

inline LogLevel& log_level()
{
    static LogLevel level = LogLevel::info;
    return level;
}

inline void log(LogLevel level, const std::string& msg)
{
    if (level < log_level()) return;
    static const char* names[] = {"debug", "info", "warn", "error"};
    std::clog << "[nfanet " << names[static_cast<int>(level)] << "] " << msg << '\n';
}
inline void log_info(const std::string& msg) { log(LogLevel::info, msg); }
inline void log_warn(const std::string& msg) { log(LogLevel::warn, msg); }

// ---------------------------------------------------------------------------
// Grid: row-major H x W array

template <typename T>
class Grid {
public:
    Grid() = default;
    Grid(int rows, int cols, T fill = T{}) : rows_(rows), cols_(cols)
    {
        if (rows < 0 || cols < 0) throw ShapeError("Grid: negative extent");
        data_.assign(static_cast<std::size_t>(rows) * cols, fill);
    }

    int rows() const noexcept { return rows_; }
    int cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T& operator()(int r, int c) noexcept { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
    const T& operator()(int r, int c) const noexcept
    {
        return data_[static_cast<std::size_t>(r) * cols_ + c];
    }
    bool contains(int r, int c) const noexcept { return r >= 0 && c >= 0 && r < rows_ && c < cols_; }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::vector<T>& values() noexcept { return data_; }
    const std::vector<T>& values() const noexcept { return data_; }

    bool same_shape(const Grid& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }
    friend bool operator==(const Grid& a, const Grid& b)
    {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<T> data_;
};

/// Binary mask over {0,1}.
using BinaryMask = Grid<std::uint8_t>;
using RealMap = Grid<double>;

inline std::size_t count_foreground(const BinaryMask& m)
{
    return static_cast<std::size_t>(std::count(m.values().begin(), m.values().end(), std::uint8_t{1}));
}

inline void require_binary(const BinaryMask& m, const char* where)
{
    for (auto v : m.values())
        if (v > 1) throw DataError(std::string(where) + ": mask values must be 0 or 1");
}

// ---------------------------------------------------------------------------
// ImageTensor: H x W x C intensities in [0,1], stored HWC row-major

class ImageTensor {
public:
    ImageTensor() = default;
    ImageTensor(int height, int width, int channels, float fill = 0.f)
        : h_(height), w_(width), c_(channels)
    {
        if (height < 0 || width < 0 || channels < 0) throw ShapeError("ImageTensor: negative extent");
        data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
    }

    int height() const noexcept { return h_; }
    int width() const noexcept { return w_; }
    int channels() const noexcept { return c_; }
    std::size_t size() const noexcept { return data_.size(); }

    float& operator()(int r, int c, int ch) noexcept { return data_[index(r, c, ch)]; }
    float operator()(int r, int c, int ch) const noexcept { return data_[index(r, c, ch)]; }

    float* data() noexcept { return data_.data(); }
    const float* data() const noexcept { return data_.data(); }
    std::vector<float>& values() noexcept { return data_; }
    const std::vector<float>& values() const noexcept { return data_; }

    bool same_shape(const ImageTensor& o) const noexcept
    {
        return h_ == o.h_ && w_ == o.w_ && c_ == o.c_;
    }
    friend bool operator==(const ImageTensor& a, const ImageTensor& b)
    {
        return a.same_shape(b) && a.data_ == b.data_;
    }

    /// Throws DataError unless every value is finite and inside [0,1].
    void validate() const
    {
        for (float v : data_)
            if (!std::isfinite(v) || v < 0.f || v > 1.f)
                throw DataError("ImageTensor: values must be finite and within [0,1]");
    }

private:
    std::size_t index(int r, int c, int ch) const noexcept
    {
        return (static_cast<std::size_t>(r) * w_ + c) * c_ + ch;
    }

    int h_ = 0;
    int w_ = 0;
    int c_ = 0;
    std::vector<float> data_;
};

inline ImageTensor mask_to_image(const BinaryMask& m)
{
    ImageTensor out(m.rows(), m.cols(), 1);
    for (std::size_t i = 0; i < m.size(); ++i) out.values()[i] = m.values()[i] ? 1.f : 0.f;
    return out;
}

inline BinaryMask image_to_mask(const ImageTensor& img)
{
    if (img.channels() != 1) throw ShapeError("image_to_mask: expected a single channel");
    BinaryMask out(img.height(), img.width());
    for (std::size_t i = 0; i < out.size(); ++i) out.values()[i] = img.values()[i] >= 0.5f ? 1 : 0;
    return out;
}

/// Nearest-neighbour replication of every cell into a factor x factor block.
template <typename T>
Grid<T> upsample_nearest(const Grid<T>& g, int factor)
{
    if (factor < 1) throw ConfigError("upsample_nearest: factor must be >= 1");
    Grid<T> out(g.rows() * factor, g.cols() * factor);
    for (int r = 0; r < out.rows(); ++r)
        for (int c = 0; c < out.cols(); ++c) out(r, c) = g(r / factor, c / factor);
    return out;
}

template <typename T>
Grid<T> crop(const Grid<T>& g, int rows, int cols)
{
    if (rows > g.rows() || cols > g.cols()) throw ShapeError("crop: target larger than source");
    Grid<T> out(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) out(r, c) = g(r, c);
    return out;
}

// ---------------------------------------------------------------------------
// FeatureStack: per-member feature maps of a neighbour group,
// logically H x W x C x L, stored member-major then channel-major ([l][c][i][j])
// which is the layout the network produces.

class FeatureStack {
public:
    FeatureStack() = default;
    FeatureStack(int rows, int cols, int channels, int members, float fill = 0.f)
        : rows_(rows), cols_(cols), channels_(channels), members_(members)
    {
        if (rows < 0 || cols < 0 || channels < 1 || members < 1)
            throw ShapeError("FeatureStack: invalid extent");
        data_.assign(static_cast<std::size_t>(rows) * cols * channels * members, fill);
    }

    int rows() const noexcept { return rows_; }
    int cols() const noexcept { return cols_; }
    int channels() const noexcept { return channels_; }
    int members() const noexcept { return members_; }

    float& operator()(int i, int j, int c, int l) noexcept { return data_[index(i, j, c, l)]; }
    float operator()(int i, int j, int c, int l) const noexcept { return data_[index(i, j, c, l)]; }

    /// Pointer to the contiguous rows x cols plane of channel c, member l.
    float* plane(int c, int l) noexcept { return data_.data() + index(0, 0, c, l); }
    const float* plane(int c, int l) const noexcept { return data_.data() + index(0, 0, c, l); }

    std::vector<float>& values() noexcept { return data_; }
    const std::vector<float>& values() const noexcept { return data_; }

private:
    std::size_t index(int i, int j, int c, int l) const noexcept
    {
        return ((static_cast<std::size_t>(l) * channels_ + c) * rows_ + i) * cols_ + j;
    }

    int rows_ = 0;
    int cols_ = 0;
    int channels_ = 0;
    int members_ = 0;
    std::vector<float> data_;
};

} // namespace nfanet
