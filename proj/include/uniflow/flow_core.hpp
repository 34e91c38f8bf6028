#pragma once

#include "uniflow/errors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace uniflow {

/// Per-pixel displacement in pixels.
struct Flow2 {
    double u = 0.0;
    double v = 0.0;

    friend Flow2 operator+(Flow2 a, Flow2 b) { return {a.u + b.u, a.v + b.v}; }
    friend Flow2 operator-(Flow2 a, Flow2 b) { return {a.u - b.u, a.v - b.v}; }
    friend Flow2 operator*(double s, Flow2 a) { return {s * a.u, s * a.v}; }
    friend bool operator==(Flow2 a, Flow2 b) = default;

    double norm() const { return std::hypot(u, v); }
};

/// Dense displacement map from the reference frame to some other frame.
///
/// Values are stored row-major. Pixels whose displacement is unknown (for
/// example points that project behind the camera) carry a zero vector and a
/// cleared bit in the valid mask.
class FlowField {
public:
    FlowField() = default;

    FlowField(int width, int height, Flow2 fill = {})
        : width_(checked_dim(width)), height_(checked_dim(height)),
          data_(static_cast<std::size_t>(width) * height, fill),
          valid_(data_.size(), 1) {}

    FlowField(int width, int height, std::vector<Flow2> data)
        : width_(checked_dim(width)), height_(checked_dim(height)), data_(std::move(data)),
          valid_(data_.size(), 1) {
        if (data_.size() != static_cast<std::size_t>(width_) * height_) {
            throw DimensionError("flow data length does not match width x height");
        }
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    Flow2& at(int x, int y) { return data_[index(x, y)]; }
    const Flow2& at(int x, int y) const { return data_[index(x, y)]; }

    bool valid(int x, int y) const { return valid_[index(x, y)] != 0; }
    void set_valid(int x, int y, bool v) { valid_[index(x, y)] = v ? 1 : 0; }
    bool all_valid() const {
        return std::all_of(valid_.begin(), valid_.end(), [](auto b) { return b != 0; });
    }

    std::span<Flow2> data() noexcept { return data_; }
    std::span<const Flow2> data() const noexcept { return data_; }
    std::span<std::uint8_t> mask() noexcept { return valid_; }
    std::span<const std::uint8_t> mask() const noexcept { return valid_; }

    bool same_shape(const FlowField& o) const noexcept {
        return width_ == o.width_ && height_ == o.height_;
    }

    /// Throws DataError if any displacement is NaN or infinite.
    void check_finite() const {
        for (std::size_t i = 0; i < data_.size(); ++i) {
            if (!std::isfinite(data_[i].u) || !std::isfinite(data_[i].v)) {
                throw DataError("non-finite flow value at pixel (" +
                                std::to_string(i % width_) + ", " +
                                std::to_string(i / width_) + ")");
            }
        }
    }

    friend bool operator==(const FlowField&, const FlowField&) = default;

private:
    static int checked_dim(int d) {
        if (d < 0) throw DimensionError("negative flow dimension");
        return d;
    }
    std::size_t index(int x, int y) const {
        return static_cast<std::size_t>(y) * width_ + x;
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<Flow2> data_;
    std::vector<std::uint8_t> valid_;
};

/// Frames 1..L-1 of a clip, each holding displacement from frame 0.
/// frames()[0] is the flow for frame index 1.
class FlowSequence {
public:
    FlowSequence() = default;

    explicit FlowSequence(std::vector<FlowField> frames) : frames_(std::move(frames)) {
        for (const auto& f : frames_) {
            if (!f.same_shape(frames_.front())) {
                throw DimensionError("flow sequence frames differ in size");
            }
        }
    }

    /// Zero sequence with `count` frames.
    static FlowSequence zeros(int width, int height, int count) {
        return FlowSequence(std::vector<FlowField>(static_cast<std::size_t>(count),
                                                   FlowField(width, height)));
    }

    int width() const noexcept { return frames_.empty() ? 0 : frames_.front().width(); }
    int height() const noexcept { return frames_.empty() ? 0 : frames_.front().height(); }
    int count() const noexcept { return static_cast<int>(frames_.size()); }
    bool empty() const noexcept { return frames_.empty(); }

    const std::vector<FlowField>& frames() const noexcept { return frames_; }
    FlowField& operator[](std::size_t i) { return frames_[i]; }
    const FlowField& operator[](std::size_t i) const { return frames_[i]; }

    bool same_shape(const FlowSequence& o) const noexcept {
        return count() == o.count() && width() == o.width() && height() == o.height();
    }

    void check_finite() const {
        for (const auto& f : frames_) f.check_finite();
    }

    friend bool operator==(const FlowSequence&, const FlowSequence&) = default;

private:
    std::vector<FlowField> frames_;
};

/// Multi-channel raster with double samples; RGB images use [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c, double fill = 0.0)
        : width(w), height(h), channels(c),
          data(static_cast<std::size_t>(w) * h * c, fill) {
        if (w < 0 || h < 0 || c < 1) throw DimensionError("bad image dimensions");
    }

    double& at(int x, int y, int c = 0) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    double at(int x, int y, int c = 0) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }

    friend bool operator==(const Image&, const Image&) = default;
};

// ---------------------------------------------------------------------------
// Middlebury .flo
// ---------------------------------------------------------------------------

inline constexpr float kFloMagic = 202021.25f;

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[off + i]) << (8 * i);
    return v;
}

inline void put_f32(std::vector<std::uint8_t>& out, float f) {
    put_u32(out, std::bit_cast<std::uint32_t>(f));
}

inline float get_f32(std::span<const std::uint8_t> in, std::size_t off) {
    return std::bit_cast<float>(get_u32(in, off));
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path,
                             std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
}

} // namespace detail

/// Serializes to the .flo layout. Displacements are narrowed to float32.
inline std::vector<std::uint8_t> encode_flo(const FlowField& field) {
    if (field.width() <= 0 || field.height() <= 0) {
        throw DimensionError("cannot encode an empty flow field");
    }
    field.check_finite();
    std::vector<std::uint8_t> out;
    out.reserve(12 + field.size() * 8);
    detail::put_f32(out, kFloMagic);
    detail::put_u32(out, static_cast<std::uint32_t>(field.width()));
    detail::put_u32(out, static_cast<std::uint32_t>(field.height()));
    for (const auto& f : field.data()) {
        detail::put_f32(out, static_cast<float>(f.u));
        detail::put_f32(out, static_cast<float>(f.v));
    }
    return out;
}

inline FlowField decode_flo(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 12) throw IoError("truncated .flo header");
    if (detail::get_f32(bytes, 0) != kFloMagic) throw FormatError("bad .flo magic");
    const auto w = static_cast<std::int32_t>(detail::get_u32(bytes, 4));
    const auto h = static_cast<std::int32_t>(detail::get_u32(bytes, 8));
    if (w <= 0 || h <= 0) throw FormatError("non-positive .flo dimensions");
    const auto n = static_cast<std::uint64_t>(w) * static_cast<std::uint64_t>(h);
    if (bytes.size() - 12 < n * 8) throw IoError("truncated .flo payload");

    FlowField field(w, h);
    auto data = field.data();
    for (std::uint64_t i = 0; i < n; ++i) {
        const float u = detail::get_f32(bytes, 12 + i * 8);
        const float v = detail::get_f32(bytes, 16 + i * 8);
        if (!std::isfinite(u) || !std::isfinite(v)) {
            throw DataError("non-finite value in .flo payload at pixel " + std::to_string(i));
        }
        data[i] = {u, v};
    }
    return field;
}

inline FlowField read_flo(const std::filesystem::path& path) {
    return decode_flo(detail::read_file_bytes(path));
}

inline void write_flo(const FlowField& field, const std::filesystem::path& path) {
    detail::write_file_bytes(path, encode_flo(field));
}

/// File name used for frame l (1-based) inside a sequence directory.
inline std::string flo_frame_name(int l) {
    std::ostringstream s;
    s << "frame_" << std::setw(4) << std::setfill('0') << l << ".flo";
    return s.str();
}

inline void write_flo_sequence(const FlowSequence& seq, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string());
    for (int l = 1; l <= seq.count(); ++l) {
        write_flo(seq[static_cast<std::size_t>(l - 1)], dir / flo_frame_name(l));
    }
}

/// Reads every *.flo in a directory in lexicographic order.
inline FlowSequence read_flo_sequence(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".flo") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoError("no .flo files in " + dir.string());
    std::vector<FlowField> frames;
    for (const auto& f : files) frames.push_back(read_flo(f));
    return FlowSequence(std::move(frames));
}

inline FlowSequence read_flo_list(std::span<const std::filesystem::path> files) {
    std::vector<FlowField> frames;
    for (const auto& f : files) frames.push_back(read_flo(f));
    return FlowSequence(std::move(frames));
}

// ---------------------------------------------------------------------------
// Visualization
// ---------------------------------------------------------------------------

namespace detail {

/// HSV with V = 1. Hue in degrees [0, 360), saturation in [0, 1].
inline void hsv_to_rgb(double hue, double sat, double rgb[3]) {
    const double h = hue / 60.0;
    const int sector = static_cast<int>(std::floor(h)) % 6;
    const double f = h - std::floor(h);
    const double p = 1.0 - sat;
    const double q = 1.0 - sat * f;
    const double t = 1.0 - sat * (1.0 - f);
    switch (sector) {
    case 0: rgb[0] = 1; rgb[1] = t; rgb[2] = p; break;
    case 1: rgb[0] = q; rgb[1] = 1; rgb[2] = p; break;
    case 2: rgb[0] = p; rgb[1] = 1; rgb[2] = t; break;
    case 3: rgb[0] = p; rgb[1] = q; rgb[2] = 1; break;
    case 4: rgb[0] = t; rgb[1] = p; rgb[2] = 1; break;
    default: rgb[0] = 1; rgb[1] = p; rgb[2] = q; break;
    }
}

} // namespace detail

inline double max_magnitude(const FlowField& field) {
    double m = 0.0;
    for (std::size_t i = 0; i < field.size(); ++i) {
        if (field.mask()[i]) m = std::max(m, field.data()[i].norm());
    }
    return m;
}

inline double max_magnitude(const FlowSequence& seq) {
    double m = 0.0;
    for (const auto& f : seq.frames()) m = std::max(m, max_magnitude(f));
    return m;
}

/// Color-codes a flow field as RGB in [0, 1].
///
/// Hue is the direction atan2(v, u), saturation is the magnitude divided by
/// `max_magnitude` and clipped at 1, value is always 1, so zero flow is white.
/// Without an explicit limit the field's own maximum valid magnitude is used.
/// Invalid pixels render black.
inline Image flow_to_color(const FlowField& field, std::optional<double> max_mag = std::nullopt) {
    field.check_finite();
    const double limit = max_mag ? *max_mag : max_magnitude(field);
    if (max_mag && !(*max_mag > 0.0)) throw ArgumentError("max_magnitude must be positive");

    constexpr double kPi = 3.14159265358979323846;
    Image out(field.width(), field.height(), 3, 1.0);
    for (int y = 0; y < field.height(); ++y) {
        for (int x = 0; x < field.width(); ++x) {
            if (!field.valid(x, y)) {
                for (int c = 0; c < 3; ++c) out.at(x, y, c) = 0.0;
                continue;
            }
            const Flow2 f = field.at(x, y);
            const double mag = f.norm();
            if (mag == 0.0 || limit <= 0.0) continue;
            double hue = std::atan2(f.v, f.u) * 180.0 / kPi;
            if (hue < 0.0) hue += 360.0;
            if (hue >= 360.0) hue -= 360.0;
            double rgb[3];
            detail::hsv_to_rgb(hue, std::min(mag / limit, 1.0), rgb);
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = rgb[c];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sampling, warping, composition
// ---------------------------------------------------------------------------

/// Bilinear sample with the sample position clamped to the image border.
inline double sample_bilinear(const Image& img, double x, double y, int c) {
    x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
    y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const int x1 = std::min(x0 + 1, img.width - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double ax = x - x0;
    const double ay = y - y0;
    const double top = (1 - ax) * img.at(x0, y0, c) + ax * img.at(x1, y0, c);
    const double bot = (1 - ax) * img.at(x0, y1, c) + ax * img.at(x1, y1, c);
    return (1 - ay) * top + ay * bot;
}

inline Flow2 sample_bilinear(const FlowField& f, double x, double y) {
    x = std::clamp(x, 0.0, static_cast<double>(f.width() - 1));
    y = std::clamp(y, 0.0, static_cast<double>(f.height() - 1));
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const int x1 = std::min(x0 + 1, f.width() - 1);
    const int y1 = std::min(y0 + 1, f.height() - 1);
    const double ax = x - x0;
    const double ay = y - y0;
    const Flow2 top = (1 - ax) * f.at(x0, y0) + ax * f.at(x1, y0);
    const Flow2 bot = (1 - ax) * f.at(x0, y1) + ax * f.at(x1, y1);
    return (1 - ay) * top + ay * bot;
}

/// output(p) = image(p + F(p)), bilinear, border-clamped.
inline Image warp_backward(const Image& image, const FlowField& field) {
    if (image.width != field.width() || image.height != field.height()) {
        throw DimensionError("warp: image and flow sizes differ");
    }
    Image out(image.width, image.height, image.channels);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            const Flow2 f = field.at(x, y);
            for (int c = 0; c < image.channels; ++c) {
                out.at(x, y, c) = sample_bilinear(image, x + f.u, y + f.v, c);
            }
        }
    }
    return out;
}

inline FlowField compose_add(const FlowField& a, const FlowField& b) {
    if (!a.same_shape(b)) throw DimensionError("compose_add: flow sizes differ");
    FlowField out(a.width(), a.height());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out.data()[i] = a.data()[i] + b.data()[i];
        out.mask()[i] = a.mask()[i] && b.mask()[i];
    }
    return out;
}

/// result(p) = a(p) + b(p + a(p)); b is looked up bilinearly with border clamping.
inline FlowField compose_chain(const FlowField& a, const FlowField& b) {
    if (!a.same_shape(b)) throw DimensionError("compose_chain: flow sizes differ");
    FlowField out(a.width(), a.height());
    for (int y = 0; y < a.height(); ++y) {
        for (int x = 0; x < a.width(); ++x) {
            const Flow2 fa = a.at(x, y);
            const double sx = x + fa.u;
            const double sy = y + fa.v;
            out.at(x, y) = fa + sample_bilinear(b, sx, sy);
            const int nx = std::clamp(static_cast<int>(std::lround(sx)), 0, a.width() - 1);
            const int ny = std::clamp(static_cast<int>(std::lround(sy)), 0, a.height() - 1);
            out.set_valid(x, y, a.valid(x, y) && b.valid(nx, ny));
        }
    }
    return out;
}

inline FlowSequence compose_add(const FlowSequence& a, const FlowSequence& b) {
    if (!a.same_shape(b)) throw DimensionError("compose_add: sequence shapes differ");
    std::vector<FlowField> frames;
    for (int i = 0; i < a.count(); ++i) frames.push_back(compose_add(a[i], b[i]));
    return FlowSequence(std::move(frames));
}

inline FlowSequence compose_chain(const FlowSequence& a, const FlowSequence& b) {
    if (!a.same_shape(b)) throw DimensionError("compose_chain: sequence shapes differ");
    std::vector<FlowField> frames;
    for (int i = 0; i < a.count(); ++i) frames.push_back(compose_chain(a[i], b[i]));
    return FlowSequence(std::move(frames));
}

/// Adds i.i.d. N(0, sigma^2) to every component. Draw order is frame, row,
/// column, then u before v, so the result depends only on (seq, sigma, seed).
inline FlowSequence add_flow_noise(const FlowSequence& seq, double sigma, std::uint64_t seed) {
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ArgumentError("sigma must be >= 0");
    if (sigma == 0.0) return seq;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, sigma);
    FlowSequence out = seq;
    for (int l = 0; l < out.count(); ++l) {
        for (auto& f : out[l].data()) {
            f.u += normal(rng);
            f.v += normal(rng);
        }
    }
    return out;
}

} // namespace uniflow
