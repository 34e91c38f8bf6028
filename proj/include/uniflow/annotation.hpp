#pragma once

#include "uniflow/errors.hpp"
#include "uniflow/flow_core.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <utility>
#include <vector>

namespace uniflow {

struct Point2 {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(Point2, Point2) = default;
};

/// Polyline drawn by the user, in pixel coordinates of the reference image.
struct DragTrajectory {
    std::vector<Point2> points;
};

struct AnnotationSet {
    int width = 0;
    int height = 0;
    int num_frames = 2;
    std::vector<DragTrajectory> trajectories;

    void validate() const {
        if (width < 1 || height < 1) throw ArgumentError("annotation canvas must be at least 1x1");
        if (num_frames < 2) throw ArgumentError("annotation needs num_frames >= 2");
        for (std::size_t t = 0; t < trajectories.size(); ++t) {
            const auto& pts = trajectories[t].points;
            if (pts.size() < 2) {
                throw ArgumentError("trajectory " + std::to_string(t) + " has fewer than 2 points");
            }
            for (const auto& p : pts) {
                if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
                    throw DataError("trajectory " + std::to_string(t) + " has a non-finite point");
                }
                if (p.x < 0.0 || p.x >= width || p.y < 0.0 || p.y >= height) {
                    throw DataError("trajectory " + std::to_string(t) + " leaves the canvas");
                }
            }
        }
    }
};

struct Pixel {
    int x = 0;
    int y = 0;
    friend auto operator<=>(Pixel, Pixel) = default;
};

/// Displacements at control pixels, one map per frame l = 1..L-1.
struct SparseFlowSequence {
    int width = 0;
    int height = 0;
    std::vector<std::map<Pixel, Flow2>> frames;
};

/// Resamples a drawn polyline to `frames` positions with a uniform
/// Catmull-Rom spline through the points. The first and last outputs are the
/// first and last input points exactly. Fewer than four points fall back to
/// piecewise-linear interpolation.
inline std::vector<Point2> resample_trajectory(const DragTrajectory& traj, int frames) {
    const auto& p = traj.points;
    if (p.size() < 2) throw ArgumentError("resample_trajectory: need at least 2 points");
    if (frames < 2) throw ArgumentError("resample_trajectory: need at least 2 frames");

    const int n = static_cast<int>(p.size());
    // Phantom end points by reflection keep the spline exact on straight lines.
    auto point = [&](int i) -> Point2 {
        if (i < 0) return {2 * p[0].x - p[1].x, 2 * p[0].y - p[1].y};
        if (i >= n) return {2 * p[n - 1].x - p[n - 2].x, 2 * p[n - 1].y - p[n - 2].y};
        return p[static_cast<std::size_t>(i)];
    };

    std::vector<Point2> out(static_cast<std::size_t>(frames));
    for (int l = 0; l < frames; ++l) {
        const double s = static_cast<double>(l) * (n - 1) / (frames - 1);
        const int seg = std::min(static_cast<int>(std::floor(s)), n - 2);
        const double u = s - seg;
        if (n < 4) {
            const Point2 a = p[static_cast<std::size_t>(seg)];
            const Point2 b = p[static_cast<std::size_t>(seg + 1)];
            out[static_cast<std::size_t>(l)] = {a.x + u * (b.x - a.x), a.y + u * (b.y - a.y)};
            continue;
        }
        const Point2 p0 = point(seg - 1), p1 = point(seg), p2 = point(seg + 1), p3 = point(seg + 2);
        const double u2 = u * u, u3 = u2 * u;
        auto cr = [&](double a, double b, double c, double d) {
            return 0.5 * (2 * b + (-a + c) * u + (2 * a - 5 * b + 4 * c - d) * u2 +
                          (-a + 3 * b - 3 * c + d) * u3);
        };
        out[static_cast<std::size_t>(l)] = {cr(p0.x, p1.x, p2.x, p3.x), cr(p0.y, p1.y, p2.y, p3.y)};
    }
    out.front() = p.front();
    out.back() = p.back();
    return out;
}

/// Each trajectory anchors at its rounded first resampled position and
/// contributes T_l - T_0 at frame l. Trajectories sharing an anchor pixel are
/// averaged.
inline SparseFlowSequence sparse_flow(const AnnotationSet& ann) {
    ann.validate();
    SparseFlowSequence out;
    out.width = ann.width;
    out.height = ann.height;
    out.frames.resize(static_cast<std::size_t>(ann.num_frames - 1));

    std::vector<std::map<Pixel, std::pair<Flow2, int>>> sums(out.frames.size());
    for (const auto& traj : ann.trajectories) {
        const auto pos = resample_trajectory(traj, ann.num_frames);
        const Pixel anchor{
            std::clamp(static_cast<int>(std::lround(pos[0].x)), 0, ann.width - 1),
            std::clamp(static_cast<int>(std::lround(pos[0].y)), 0, ann.height - 1)};
        for (int l = 1; l < ann.num_frames; ++l) {
            const Point2 d{pos[l].x - pos[0].x, pos[l].y - pos[0].y};
            auto& slot = sums[static_cast<std::size_t>(l - 1)][anchor];
            slot.first = slot.first + Flow2{d.x, d.y};
            slot.second += 1;
        }
    }
    for (std::size_t l = 0; l < sums.size(); ++l) {
        for (const auto& [px, acc] : sums[l]) {
            out.frames[l][px] = (1.0 / acc.second) * acc.first;
        }
    }
    return out;
}

/// Radius multiples used by the Gaussian densifier.
struct DensifyParams {
    double sigma = 0.0;
    /// Distance (in sigma) at which the background anchor equals one kernel weight.
    double anchor_radius = 1.5;
    /// Kernel support (in sigma); weights vanish beyond it.
    double cutoff_radius = 4.0;
};

inline double default_sigma(int width, int height) {
    return 0.05 * std::max(width, height);
}

/// Gaussian radial-basis densification of sparse control displacements.
///
/// F(p) = sum_i w_i(p) f_i / (sum_i w_i(p) + eps_bg), with
/// w_i(p) = exp(-|p - c_i|^2 / (2 sigma^2)) inside the cutoff radius and
/// eps_bg = exp(-r_anchor^2 / (2 sigma^2)). Control pixels take their sparse
/// value exactly.
inline FlowField densify_frame(const std::map<Pixel, Flow2>& sparse, int width, int height,
                               const DensifyParams& params) {
    const double sigma = params.sigma;
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ArgumentError("densify: sigma must be > 0");
    FlowField field(width, height);
    if (sparse.empty()) return field;

    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    const double ra = params.anchor_radius * sigma;
    const double rc = params.cutoff_radius * sigma;
    const double eps_bg = std::exp(-ra * ra * inv2s2);
    const double rc2 = rc * rc;
    const int reach = static_cast<int>(std::ceil(rc));

    std::vector<double> wsum(field.size(), 0.0);
    std::vector<Flow2> acc(field.size());
    for (const auto& [c, f] : sparse) {
        const int y0 = std::max(0, c.y - reach), y1 = std::min(height - 1, c.y + reach);
        const int x0 = std::max(0, c.x - reach), x1 = std::min(width - 1, c.x + reach);
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double d2 = static_cast<double>((x - c.x) * (x - c.x) + (y - c.y) * (y - c.y));
                if (d2 > rc2) continue;
                const double w = std::exp(-d2 * inv2s2);
                const std::size_t i = static_cast<std::size_t>(y) * width + x;
                wsum[i] += w;
                acc[i] = acc[i] + w * f;
            }
        }
    }
    for (std::size_t i = 0; i < field.size(); ++i) {
        if (wsum[i] > 0.0) field.data()[i] = (1.0 / (wsum[i] + eps_bg)) * acc[i];
    }
    for (const auto& [c, f] : sparse) {
        if (c.x >= 0 && c.x < width && c.y >= 0 && c.y < height) field.at(c.x, c.y) = f;
    }
    return field;
}

inline FlowSequence densify(const SparseFlowSequence& sparse, int width, int height,
                            const DensifyParams& params) {
    if (!(params.sigma > 0.0) || !std::isfinite(params.sigma)) {
        throw ArgumentError("densify: sigma must be > 0");
    }
    if (width < 1 || height < 1) throw ArgumentError("densify: bad dimensions");
    std::vector<FlowField> frames;
    frames.reserve(sparse.frames.size());
    for (const auto& f : sparse.frames) frames.push_back(densify_frame(f, width, height, params));
    return FlowSequence(std::move(frames));
}

inline FlowSequence densify(const SparseFlowSequence& sparse, int width, int height, double sigma) {
    DensifyParams p;
    p.sigma = sigma;
    return densify(sparse, width, height, p);
}

/// sparse_flow followed by densify; sigma defaults to 5% of the larger side.
inline FlowSequence drag_flow(const AnnotationSet& ann, std::optional<double> sigma = std::nullopt) {
    return densify(sparse_flow(ann), ann.width, ann.height,
                   sigma ? *sigma : default_sigma(ann.width, ann.height));
}

} // namespace uniflow
