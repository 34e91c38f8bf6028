#pragma once

#include "uniflow/errors.hpp"
#include "uniflow/flow_core.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace uniflow {

inline constexpr int kTemporalBlock = 4;
inline constexpr int kSpatialBlock = 8;

/// Block-mean (u, v) per 4-frame x 8x8-pixel cell, stored [t][y][x][2].
struct LatentGrid {
    int frames = 0;  ///< original flow frame count
    int height = 0;
    int width = 0;
    int t_blocks = 0;
    int h_blocks = 0;
    int w_blocks = 0;
    std::vector<double> data;

    double& at(int t, int y, int x, int c) { return data[offset(t, y, x, c)]; }
    double at(int t, int y, int x, int c) const { return data[offset(t, y, x, c)]; }

    std::size_t cells() const {
        return static_cast<std::size_t>(t_blocks) * h_blocks * w_blocks;
    }

    void validate() const {
        auto ceil_div = [](int a, int b) { return (a + b - 1) / b; };
        if (frames < 1 || height < 1 || width < 1) throw FormatError("latent: bad original dims");
        if (t_blocks != ceil_div(frames, kTemporalBlock) || h_blocks != ceil_div(height, kSpatialBlock) ||
            w_blocks != ceil_div(width, kSpatialBlock)) {
            throw FormatError("latent: block counts inconsistent with original dims");
        }
        if (data.size() != cells() * 2) throw FormatError("latent: payload size mismatch");
        for (double v : data) {
            if (!std::isfinite(v)) throw DataError("latent: non-finite value");
        }
    }

    /// Payload as one vector, cell-major with (u, v) interleaved.
    Eigen::VectorXd flat() const {
        return Eigen::Map<const Eigen::VectorXd>(data.data(), static_cast<Eigen::Index>(data.size()));
    }

    /// One row per cell, columns (u, v): the token layout used for conditioning.
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> tokens() const {
        return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            data.data(), static_cast<Eigen::Index>(cells()), 2);
    }

    friend bool operator==(const LatentGrid&, const LatentGrid&) = default;

private:
    std::size_t offset(int t, int y, int x, int c) const {
        return ((static_cast<std::size_t>(t) * h_blocks + y) * w_blocks + x) * 2 + c;
    }
};

inline LatentGrid encode(const FlowSequence& seq) {
    if (seq.empty()) throw ArgumentError("encode: empty flow sequence");
    LatentGrid lat;
    lat.frames = seq.count();
    lat.height = seq.height();
    lat.width = seq.width();
    lat.t_blocks = (lat.frames + kTemporalBlock - 1) / kTemporalBlock;
    lat.h_blocks = (lat.height + kSpatialBlock - 1) / kSpatialBlock;
    lat.w_blocks = (lat.width + kSpatialBlock - 1) / kSpatialBlock;
    lat.data.assign(lat.cells() * 2, 0.0);

    // Averaging deviations from the first sample keeps uniform blocks exact.
    const Flow2 base = seq[0].at(0, 0);
    std::vector<long> counts(lat.cells(), 0);
    for (int t = 0; t < lat.frames; ++t) {
        for (int y = 0; y < lat.height; ++y) {
            for (int x = 0; x < lat.width; ++x) {
                const int bt = t / kTemporalBlock, by = y / kSpatialBlock, bx = x / kSpatialBlock;
                const Flow2 f = seq[t].at(x, y);
                lat.at(bt, by, bx, 0) += f.u - base.u;
                lat.at(bt, by, bx, 1) += f.v - base.v;
                ++counts[(static_cast<std::size_t>(bt) * lat.h_blocks + by) * lat.w_blocks + bx];
            }
        }
    }
    for (std::size_t i = 0; i < counts.size(); ++i) {
        lat.data[2 * i] = base.u + lat.data[2 * i] / static_cast<double>(counts[i]);
        lat.data[2 * i + 1] = base.v + lat.data[2 * i + 1] / static_cast<double>(counts[i]);
    }
    return lat;
}

namespace detail {

/// Linear interpolation (and extrapolation) through block centers along one
/// axis. Returns the length x blocks matrix mapping center values to samples.
inline Eigen::MatrixXd axis_interpolation(int length, int block) {
    const int blocks = (length + block - 1) / block;
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(length, blocks);
    if (blocks == 1) {
        m.setOnes();
        return m;
    }
    std::vector<double> centers(static_cast<std::size_t>(blocks));
    for (int b = 0; b < blocks; ++b) {
        const int lo = b * block;
        const int hi = std::min(length, lo + block) - 1;
        centers[static_cast<std::size_t>(b)] = 0.5 * (lo + hi);
    }
    for (int i = 0; i < length; ++i) {
        int seg = 0;
        while (seg + 2 < blocks && i > centers[static_cast<std::size_t>(seg + 1)]) ++seg;
        const double c0 = centers[static_cast<std::size_t>(seg)];
        const double c1 = centers[static_cast<std::size_t>(seg + 1)];
        const double a = (i - c0) / (c1 - c0);
        m(i, seg) = 1.0 - a;
        m(i, seg + 1) = a;
    }
    return m;
}

/// blocks x length matrix of actual-extent block means.
inline Eigen::MatrixXd axis_pooling(int length, int block) {
    const int blocks = (length + block - 1) / block;
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(blocks, length);
    for (int b = 0; b < blocks; ++b) {
        const int lo = b * block;
        const int hi = std::min(length, lo + block);
        for (int i = lo; i < hi; ++i) m(b, i) = 1.0 / (hi - lo);
    }
    return m;
}

/// Interpolation operator preconditioned so that pooling its output returns
/// the latent exactly: interp * (pool * interp)^-1.
inline Eigen::MatrixXd axis_decoder(int length, int block) {
    const Eigen::MatrixXd interp = axis_interpolation(length, block);
    const Eigen::MatrixXd gram = axis_pooling(length, block) * interp;
    return interp * gram.partialPivLu().inverse();
}

} // namespace detail

/// Separable multilinear reconstruction through block centers. Center values
/// are solved so that re-encoding the output reproduces `lat` exactly, which
/// also reproduces constant and linear fields exactly.
inline FlowSequence decode(const LatentGrid& lat) {
    lat.validate();
    // The operator reproduces constants, so decode deviations from the first
    // cell and add it back; uniform grids then decode without rounding.
    const double base[2] = {lat.data[0], lat.data[1]};
    const Eigen::MatrixXd dt = detail::axis_decoder(lat.frames, kTemporalBlock);
    const Eigen::MatrixXd dy = detail::axis_decoder(lat.height, kSpatialBlock);
    const Eigen::MatrixXd dx = detail::axis_decoder(lat.width, kSpatialBlock);

    // Apply along x, then y, then t.
    std::vector<double> sx(static_cast<std::size_t>(lat.t_blocks) * lat.h_blocks * lat.width * 2, 0.0);
    for (int t = 0; t < lat.t_blocks; ++t)
        for (int y = 0; y < lat.h_blocks; ++y)
            for (int x = 0; x < lat.width; ++x)
                for (int c = 0; c < 2; ++c) {
                    double s = 0.0;
                    for (int b = 0; b < lat.w_blocks; ++b) s += dx(x, b) * (lat.at(t, y, b, c) - base[c]);
                    sx[((static_cast<std::size_t>(t) * lat.h_blocks + y) * lat.width + x) * 2 + c] = s;
                }

    std::vector<double> sy(static_cast<std::size_t>(lat.t_blocks) * lat.height * lat.width * 2, 0.0);
    for (int t = 0; t < lat.t_blocks; ++t)
        for (int y = 0; y < lat.height; ++y)
            for (int x = 0; x < lat.width; ++x)
                for (int c = 0; c < 2; ++c) {
                    double s = 0.0;
                    for (int b = 0; b < lat.h_blocks; ++b)
                        s += dy(y, b) * sx[((static_cast<std::size_t>(t) * lat.h_blocks + b) * lat.width + x) * 2 + c];
                    sy[((static_cast<std::size_t>(t) * lat.height + y) * lat.width + x) * 2 + c] = s;
                }

    std::vector<FlowField> frames;
    frames.reserve(static_cast<std::size_t>(lat.frames));
    for (int f = 0; f < lat.frames; ++f) {
        FlowField field(lat.width, lat.height);
        for (int y = 0; y < lat.height; ++y)
            for (int x = 0; x < lat.width; ++x) {
                double uv[2] = {0.0, 0.0};
                for (int c = 0; c < 2; ++c)
                    for (int b = 0; b < lat.t_blocks; ++b)
                        uv[c] += dt(f, b) * sy[((static_cast<std::size_t>(b) * lat.height + y) * lat.width + x) * 2 + c];
                field.at(x, y) = {base[0] + uv[0], base[1] + uv[1]};
            }
        frames.push_back(std::move(field));
    }
    return FlowSequence(std::move(frames));
}

// ---------------------------------------------------------------------------
// Latent file: one JSON header line, then little-endian float32 payload.
// ---------------------------------------------------------------------------

inline std::vector<std::uint8_t> encode_latent_file(const LatentGrid& lat) {
    lat.validate();
    const nlohmann::json header = {
        {"format", "uniflow-latent"},
        {"frames", lat.frames}, {"height", lat.height}, {"width", lat.width},
        {"t_blocks", lat.t_blocks}, {"h_blocks", lat.h_blocks}, {"w_blocks", lat.w_blocks},
        {"channels", 2}};
    const std::string text = header.dump() + "\n";
    std::vector<std::uint8_t> out(text.begin(), text.end());
    for (double v : lat.data) detail::put_f32(out, static_cast<float>(v));
    return out;
}

inline LatentGrid decode_latent_file(std::span<const std::uint8_t> bytes) {
    const auto nl = std::find(bytes.begin(), bytes.end(), std::uint8_t{'\n'});
    if (nl == bytes.end()) throw FormatError("latent file: missing header line");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(std::string(bytes.begin(), nl));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("latent file header: ") + e.what());
    }
    if (header.value("format", "") != "uniflow-latent") throw FormatError("not a latent file");
    LatentGrid lat;
    try {
        lat.frames = header.at("frames").get<int>();
        lat.height = header.at("height").get<int>();
        lat.width = header.at("width").get<int>();
        lat.t_blocks = header.at("t_blocks").get<int>();
        lat.h_blocks = header.at("h_blocks").get<int>();
        lat.w_blocks = header.at("w_blocks").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("latent file header: ") + e.what());
    }
    if (lat.t_blocks < 0 || lat.h_blocks < 0 || lat.w_blocks < 0) throw FormatError("latent: negative block count");
    const std::size_t off = static_cast<std::size_t>(nl - bytes.begin()) + 1;
    const std::size_t n = lat.cells() * 2;
    if (bytes.size() - off < n * 4) throw IoError("latent file: truncated payload");
    lat.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) lat.data[i] = detail::get_f32(bytes, off + 4 * i);
    lat.validate();
    return lat;
}

inline void write_latent(const LatentGrid& lat, const std::filesystem::path& path) {
    detail::write_file_bytes(path, encode_latent_file(lat));
}

inline LatentGrid read_latent(const std::filesystem::path& path) {
    return decode_latent_file(detail::read_file_bytes(path));
}

} // namespace uniflow
