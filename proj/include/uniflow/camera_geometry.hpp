#pragma once

#include "uniflow/errors.hpp"
#include "uniflow/flow_core.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

namespace uniflow {

struct CameraIntrinsics {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;

    Eigen::Matrix3d matrix() const {
        Eigen::Matrix3d k;
        k << fx, 0, cx, 0, fy, cy, 0, 0, 1;
        return k;
    }

    void validate() const {
        if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(fx) || !std::isfinite(fy)) {
            throw DataError("focal lengths must be positive and finite");
        }
        if (!std::isfinite(cx) || !std::isfinite(cy)) {
            throw DataError("principal point must be finite");
        }
    }
};

/// World-to-camera pose: x_cam = rotation * x_world + translation.
struct CameraFrame {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    CameraIntrinsics intrinsics;

    Eigen::Vector3d center() const { return -rotation.transpose() * translation; }
};

inline constexpr double kRotationTolerance = 1e-6;

/// Largest entry of |R^T R - I|.
inline double orthonormality_deviation(const Eigen::Matrix3d& r) {
    return (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
}

/// Validates a rotation and snaps near-orthonormal input onto SO(3) through
/// the polar decomposition. Deviations above 1e-6 or det <= 0 are rejected.
inline Eigen::Matrix3d checked_rotation(const Eigen::Matrix3d& r) {
    if (!r.allFinite()) throw DataError("rotation has non-finite entries");
    const double dev = orthonormality_deviation(r);
    if (dev > kRotationTolerance) {
        throw DataError("rotation is not orthonormal (deviation " + std::to_string(dev) + ")");
    }
    if (r.determinant() <= 0.0) throw DataError("rotation has non-positive determinant");
    if (dev <= 1e-12) return r;
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
    return svd.matrixU() * svd.matrixV().transpose();
}

inline CameraFrame make_camera_frame(const Eigen::Matrix3d& rotation,
                                     const Eigen::Vector3d& translation,
                                     const CameraIntrinsics& intrinsics) {
    intrinsics.validate();
    if (!translation.allFinite()) throw DataError("translation has non-finite entries");
    return CameraFrame{checked_rotation(rotation), translation, intrinsics};
}

class CameraTrajectory {
public:
    CameraTrajectory() = default;
    explicit CameraTrajectory(std::vector<CameraFrame> frames) : frames_(std::move(frames)) {
        for (auto& f : frames_) f = make_camera_frame(f.rotation, f.translation, f.intrinsics);
    }

    int size() const noexcept { return static_cast<int>(frames_.size()); }
    bool empty() const noexcept { return frames_.empty(); }
    const CameraFrame& operator[](std::size_t i) const { return frames_[i]; }
    const std::vector<CameraFrame>& frames() const noexcept { return frames_; }

private:
    std::vector<CameraFrame> frames_;
};

// ---------------------------------------------------------------------------
// Plucker embedding
// ---------------------------------------------------------------------------

/// Literal: d = R K [w, h, 1]^T + t, moment t x d.
/// Conventional: d = R^T K^-1 [w, h, 1]^T (world-space ray), moment c x d with
/// c the camera center.
enum class PluckerMode { Literal, Conventional };

/// Six channels per pixel and frame, laid out channel-major (6 x F x H x W).
/// Channels 0..2 hold the moment, 3..5 the unit direction.
struct PluckerVolume {
    int frames = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;

    double& at(int c, int f, int y, int x) { return data[offset(c, f, y, x)]; }
    double at(int c, int f, int y, int x) const { return data[offset(c, f, y, x)]; }

    Eigen::Vector3d moment(int f, int y, int x) const {
        return {at(0, f, y, x), at(1, f, y, x), at(2, f, y, x)};
    }
    Eigen::Vector3d direction(int f, int y, int x) const {
        return {at(3, f, y, x), at(4, f, y, x), at(5, f, y, x)};
    }

private:
    std::size_t offset(int c, int f, int y, int x) const {
        return ((static_cast<std::size_t>(c) * frames + f) * height + y) * width + x;
    }
};

inline PluckerVolume plucker_embed(const CameraTrajectory& traj, int width, int height,
                                   PluckerMode mode = PluckerMode::Literal) {
    if (traj.empty()) throw ArgumentError("plucker_embed: empty trajectory");
    if (width < 1 || height < 1) throw ArgumentError("plucker_embed: width and height must be >= 1");

    PluckerVolume vol;
    vol.frames = traj.size();
    vol.height = height;
    vol.width = width;
    vol.data.assign(static_cast<std::size_t>(6) * vol.frames * height * width, 0.0);

    for (int f = 0; f < traj.size(); ++f) {
        const CameraFrame& cam = traj[f];
        const Eigen::Matrix3d k = cam.intrinsics.matrix();
        const Eigen::Matrix3d ray_map = mode == PluckerMode::Literal
                                            ? Eigen::Matrix3d(cam.rotation * k)
                                            : Eigen::Matrix3d(cam.rotation.transpose() * k.inverse());
        const Eigen::Vector3d offset =
            mode == PluckerMode::Literal ? cam.translation : Eigen::Vector3d::Zero();
        const Eigen::Vector3d origin =
            mode == PluckerMode::Literal ? cam.translation : cam.center();

        for (int h = 0; h < height; ++h) {
            for (int w = 0; w < width; ++w) {
                const Eigen::Vector3d d = ray_map * Eigen::Vector3d(w, h, 1.0) + offset;
                const double n = d.norm();
                if (n == 0.0) {
                    throw SingularityError("zero-length ray at frame " + std::to_string(f) +
                                               ", pixel (" + std::to_string(w) + ", " +
                                               std::to_string(h) + ")",
                                           f, w, h);
                }
                const Eigen::Vector3d dir = d / n;
                const Eigen::Vector3d m = origin.cross(dir);
                for (int c = 0; c < 3; ++c) {
                    vol.at(c, f, h, w) = m[c];
                    vol.at(3 + c, f, h, w) = dir[c];
                }
            }
        }
    }
    return vol;
}

// ---------------------------------------------------------------------------
// Depth and camera-induced flow
// ---------------------------------------------------------------------------

/// Per-pixel z-depth (distance along the optical axis) of the reference view.
struct DepthMap {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    DepthMap() = default;
    DepthMap(int w, int h, double fill = 1.0)
        : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

    double& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
    double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

struct DepthProxy {
    enum class Kind { Constant, FrontoRamp };
    Kind kind = Kind::Constant;
    /// Constant depth, or the top-row depth of a ramp.
    double near = 10.0;
    /// Bottom-row depth of a ramp; unused for constants.
    double far = 10.0;

    static DepthProxy constant(double d) { return {Kind::Constant, d, d}; }
    static DepthProxy ramp(double top, double bottom) { return {Kind::FrontoRamp, top, bottom}; }
};

/// Analytic depth map. A fronto-ramp varies linearly from `near` on the top
/// row to `far` on the bottom row.
inline DepthMap depth_proxy(const DepthProxy& proxy, int width, int height) {
    if (width < 1 || height < 1) throw ArgumentError("depth_proxy: bad dimensions");
    if (!(proxy.near > 0.0) || !std::isfinite(proxy.near) ||
        (proxy.kind == DepthProxy::Kind::FrontoRamp && (!(proxy.far > 0.0) || !std::isfinite(proxy.far)))) {
        throw ArgumentError("depth_proxy: parameters must be positive");
    }
    DepthMap depth(width, height, proxy.near);
    if (proxy.kind == DepthProxy::Kind::FrontoRamp && height > 1) {
        for (int y = 0; y < height; ++y) {
            const double a = static_cast<double>(y) / (height - 1);
            for (int x = 0; x < width; ++x) depth.at(x, y) = proxy.near + a * (proxy.far - proxy.near);
        }
    }
    return depth;
}

/// Flow from frame 0 to every later frame induced by camera motion over a
/// static scene with the given frame-0 depth. Pixels that land behind a
/// camera get zero flow and a cleared valid bit.
inline FlowSequence camera_flow(const CameraTrajectory& traj, const DepthMap& depth, int width,
                                int height) {
    if (traj.size() < 2) throw ArgumentError("camera_flow: trajectory needs at least 2 frames");
    if (depth.width != width || depth.height != height ||
        depth.data.size() != static_cast<std::size_t>(width) * height) {
        throw DimensionError("camera_flow: depth map size does not match");
    }
    for (std::size_t i = 0; i < depth.data.size(); ++i) {
        if (!(depth.data[i] > 0.0) || !std::isfinite(depth.data[i])) {
            throw DataError("camera_flow: depth must be positive and finite (pixel " +
                            std::to_string(i % width) + ", " + std::to_string(i / width) + ")");
        }
    }

    const CameraFrame& ref = traj[0];
    const CameraIntrinsics& k0 = ref.intrinsics;

    // World points of every reference pixel.
    std::vector<Eigen::Vector3d> world(static_cast<std::size_t>(width) * height);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double z = depth.at(x, y);
            const Eigen::Vector3d cam((x - k0.cx) / k0.fx * z, (y - k0.cy) / k0.fy * z, z);
            world[static_cast<std::size_t>(y) * width + x] =
                ref.rotation.transpose() * (cam - ref.translation);
        }
    }

    std::vector<FlowField> frames;
    frames.reserve(static_cast<std::size_t>(traj.size() - 1));
    for (int l = 1; l < traj.size(); ++l) {
        const CameraFrame& cam = traj[l];
        const CameraIntrinsics& k = cam.intrinsics;
        FlowField field(width, height);
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                const Eigen::Vector3d p =
                    cam.rotation * world[static_cast<std::size_t>(y) * width + x] + cam.translation;
                if (p.z() <= 0.0) {
                    field.set_valid(x, y, false);
                    continue;
                }
                const double px = k.fx * p.x() / p.z() + k.cx;
                const double py = k.fy * p.y() / p.z() + k.cy;
                field.at(x, y) = {px - x, py - y};
            }
        }
        frames.push_back(std::move(field));
    }
    return FlowSequence(std::move(frames));
}

// ---------------------------------------------------------------------------
// PFM depth files (single channel, little-endian)
// ---------------------------------------------------------------------------

inline DepthMap decode_pfm(std::span<const std::uint8_t> bytes) {
    std::string header;
    std::size_t pos = 0;
    std::vector<std::string> tokens;
    // Header is three whitespace-separated fields after the "Pf" tag.
    while (tokens.size() < 4 && pos < bytes.size()) {
        std::string tok;
        while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
        while (pos < bytes.size() && !std::isspace(bytes[pos])) tok.push_back(static_cast<char>(bytes[pos++]));
        if (!tok.empty()) tokens.push_back(tok);
    }
    ++pos;  // single whitespace byte before the raster
    if (tokens.size() < 4 || tokens[0] != "Pf") throw FormatError("not a grayscale PFM file");
    int w = 0, h = 0;
    double scale = 0.0;
    try {
        w = std::stoi(tokens[1]);
        h = std::stoi(tokens[2]);
        scale = std::stod(tokens[3]);
    } catch (const std::exception&) {
        throw FormatError("malformed PFM header");
    }
    if (w <= 0 || h <= 0 || scale == 0.0) throw FormatError("bad PFM dimensions or scale");
    const std::size_t n = static_cast<std::size_t>(w) * h;
    if (bytes.size() < pos || bytes.size() - pos < n * 4) throw IoError("truncated PFM raster");

    const bool little = scale < 0.0;
    DepthMap depth(w, h);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t raw = 0;
        for (int b = 0; b < 4; ++b) {
            const int shift = little ? 8 * b : 8 * (3 - b);
            raw |= static_cast<std::uint32_t>(bytes[pos + i * 4 + b]) << shift;
        }
        const int row = static_cast<int>(i / w);
        const int col = static_cast<int>(i % w);
        depth.at(col, h - 1 - row) = std::bit_cast<float>(raw);  // rows stored bottom-up
    }
    return depth;
}

inline DepthMap read_pfm(const std::filesystem::path& path) {
    return decode_pfm(detail::read_file_bytes(path));
}

inline void write_pfm(const DepthMap& depth, const std::filesystem::path& path) {
    const std::string header = "Pf\n" + std::to_string(depth.width) + " " +
                               std::to_string(depth.height) + "\n-1.0\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    for (int row = depth.height - 1; row >= 0; --row) {
        for (int x = 0; x < depth.width; ++x) detail::put_f32(out, static_cast<float>(depth.at(x, row)));
    }
    detail::write_file_bytes(path, out);
}

} // namespace uniflow
