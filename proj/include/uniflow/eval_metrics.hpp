#pragma once

#include "uniflow/camera_geometry.hpp"
#include "uniflow/errors.hpp"
#include "uniflow/flow_core.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace uniflow {

struct Pose {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    Eigen::Vector3d center() const { return -rotation.transpose() * translation; }
};

/// World-to-camera poses. Rotations are validated like camera frames.
class PoseTrajectory {
public:
    PoseTrajectory() = default;
    explicit PoseTrajectory(std::vector<Pose> poses) : poses_(std::move(poses)) {
        for (auto& p : poses_) {
            p.rotation = checked_rotation(p.rotation);
            if (!p.translation.allFinite()) throw DataError("pose translation is not finite");
        }
    }
    explicit PoseTrajectory(const CameraTrajectory& traj) {
        for (const auto& f : traj.frames()) poses_.push_back({f.rotation, f.translation});
    }

    int size() const noexcept { return static_cast<int>(poses_.size()); }
    const Pose& operator[](std::size_t i) const { return poses_[i]; }
    const std::vector<Pose>& poses() const noexcept { return poses_; }

private:
    std::vector<Pose> poses_;
};

namespace detail {
inline void check_pair(const PoseTrajectory& a, const PoseTrajectory& b) {
    if (a.size() != b.size()) throw ArgumentError("trajectory lengths differ");
    if (a.size() < 2) throw ArgumentError("trajectories need at least 2 poses");
}
} // namespace detail

/// Geodesic angle of R_a R_b^T in radians, in [0, pi]. Same value as
/// acos((tr - 1) / 2), but atan2 keeps precision near 0 and pi.
inline double rotation_angle_between(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
    const Eigen::Matrix3d rel = a * b.transpose();
    const Eigen::Vector3d axis(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0), rel(1, 0) - rel(0, 1));
    return std::atan2(0.5 * axis.norm(), std::clamp((rel.trace() - 1.0) / 2.0, -1.0, 1.0));
}

/// Mean per-frame geodesic rotation distance.
inline double rotation_error(const PoseTrajectory& pred, const PoseTrajectory& gt) {
    detail::check_pair(pred, gt);
    double sum = 0.0;
    for (int i = 0; i < pred.size(); ++i) sum += rotation_angle_between(pred[i].rotation, gt[i].rotation);
    return sum / pred.size();
}

/// Camera centers relative to the first one, scaled to unit path length.
/// A trajectory that never moves is returned centered but unscaled.
inline std::vector<Eigen::Vector3d> normalized_centers(const PoseTrajectory& traj) {
    std::vector<Eigen::Vector3d> c;
    c.reserve(static_cast<std::size_t>(traj.size()));
    const Eigen::Vector3d origin = traj[0].center();
    for (const auto& p : traj.poses()) c.push_back(p.center() - origin);
    double length = 0.0;
    for (std::size_t i = 1; i < c.size(); ++i) length += (c[i] - c[i - 1]).norm();
    if (length > 0.0) {
        for (auto& v : c) v /= length;
    }
    return c;
}

/// Mean distance between path-length-normalized camera centers.
inline double translation_error(const PoseTrajectory& pred, const PoseTrajectory& gt) {
    detail::check_pair(pred, gt);
    const auto a = normalized_centers(pred);
    const auto b = normalized_centers(gt);
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[i]).norm();
    return sum / static_cast<double>(a.size());
}

enum class SamplingMode { Basic, Difficult };

inline constexpr int kBasicStride = 8;

inline int sampling_stride(int source_frames, SamplingMode mode, int clip_len) {
    if (clip_len < 1) throw ArgumentError("clip length must be >= 1");
    if (source_frames < 1) throw ArgumentError("empty source trajectory");
    if (clip_len == 1) return mode == SamplingMode::Basic ? kBasicStride : 1;
    const int stride = mode == SamplingMode::Basic ? kBasicStride : (source_frames - 1) / (clip_len - 1);
    if (stride < 1 || stride * (clip_len - 1) > source_frames - 1) {
        throw ArgumentError("source has " + std::to_string(source_frames) + " frames, too few for a " +
                            std::to_string(clip_len) + "-frame clip");
    }
    return stride;
}

/// Frame indices 0, s, 2s, ... for the evaluation clip. Basic uses stride 8;
/// difficult uses the largest stride that still fits clip_len frames.
inline std::vector<int> sample_indices(int source_frames, SamplingMode mode, int clip_len) {
    const int stride = sampling_stride(source_frames, mode, clip_len);
    std::vector<int> idx(static_cast<std::size_t>(clip_len));
    for (int i = 0; i < clip_len; ++i) idx[static_cast<std::size_t>(i)] = i * stride;
    return idx;
}

inline PoseTrajectory sample_trajectory(const PoseTrajectory& full, SamplingMode mode, int clip_len) {
    std::vector<Pose> out;
    for (int i : sample_indices(full.size(), mode, clip_len)) out.push_back(full[static_cast<std::size_t>(i)]);
    return PoseTrajectory(std::move(out));
}

/// Mean L2 displacement difference over pixels valid in both sequences.
inline double endpoint_error(const FlowSequence& pred, const FlowSequence& gt) {
    if (!pred.same_shape(gt)) throw DimensionError("endpoint_error: sequence shapes differ");
    double sum = 0.0;
    long n = 0;
    for (int l = 0; l < pred.count(); ++l) {
        const auto& a = pred[l];
        const auto& b = gt[l];
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (!a.mask()[i] || !b.mask()[i]) continue;
            sum += (a.data()[i] - b.data()[i]).norm();
            ++n;
        }
    }
    return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

/// Median over frames of the mean flow magnitude; lower means a steadier camera.
inline double static_camera_score(const FlowSequence& seq) {
    if (seq.empty()) throw ArgumentError("static_camera_score: empty sequence");
    std::vector<double> means;
    for (const auto& f : seq.frames()) {
        double s = 0.0;
        for (const auto& v : f.data()) s += v.norm();
        means.push_back(s / static_cast<double>(f.size()));
    }
    std::sort(means.begin(), means.end());
    const std::size_t n = means.size();
    return n % 2 == 1 ? means[n / 2] : 0.5 * (means[n / 2 - 1] + means[n / 2]);
}

} // namespace uniflow
