#pragma once

#include "uniflow/annotation.hpp"
#include "uniflow/camera_geometry.hpp"
#include "uniflow/errors.hpp"
#include "uniflow/flow_core.hpp"

#include <optional>
#include <string>
#include <vector>

namespace uniflow {

enum class ComposeMode { Add, Chain };

struct CameraControl {
    CameraTrajectory trajectory;
    DepthMap depth;
};

/// Everything the stage-1 engine turns into one dense flow sequence.
struct ControlBundle {
    int width = 0;
    int height = 0;
    /// Clip length L; outputs carry L - 1 flow frames.
    int num_frames = 0;
    std::optional<CameraControl> camera;
    std::optional<AnnotationSet> drags;
    std::optional<FlowSequence> reference;
    /// Densifier bandwidth; defaults to 5% of the larger side.
    std::optional<double> sigma;

    int control_count() const {
        return (camera ? 1 : 0) + (drags ? 1 : 0) + (reference ? 1 : 0);
    }

    void validate() const {
        if (control_count() == 0) throw ConfigError("bundle has no controls");
        if (width < 1 || height < 1) throw ConfigError("bundle: width and height must be >= 1");
        if (num_frames < 2) throw ConfigError("bundle: num_frames must be >= 2");
        if (camera) {
            if (camera->trajectory.size() != num_frames) {
                throw ConfigError("camera: trajectory has " + std::to_string(camera->trajectory.size()) +
                                      " frames, bundle declares " + std::to_string(num_frames),
                                  "camera");
            }
            if (camera->depth.width != width || camera->depth.height != height) {
                throw ConfigError("camera: depth map size differs from bundle size", "camera");
            }
        }
        if (drags) {
            if (drags->width != width || drags->height != height) {
                throw ConfigError("drags: annotation canvas differs from bundle size", "drags");
            }
            if (drags->num_frames != num_frames) {
                throw ConfigError("drags: annotation num_frames differs from bundle", "drags");
            }
        }
        if (reference) {
            if (reference->count() != num_frames - 1) {
                throw ConfigError("reference: expected " + std::to_string(num_frames - 1) +
                                      " flow frames, got " + std::to_string(reference->count()),
                                  "reference");
            }
            if (reference->width() != width || reference->height() != height) {
                throw ConfigError("reference: flow size differs from bundle size", "reference");
            }
            reference->check_finite();
        }
    }
};

/// Dense rendering of each present control, in fold order camera, drags, reference.
inline std::vector<FlowSequence> render_controls(const ControlBundle& bundle) {
    bundle.validate();
    std::vector<FlowSequence> out;
    if (bundle.camera) {
        out.push_back(camera_flow(bundle.camera->trajectory, bundle.camera->depth, bundle.width,
                                  bundle.height));
    }
    if (bundle.drags) out.push_back(drag_flow(*bundle.drags, bundle.sigma));
    if (bundle.reference) out.push_back(*bundle.reference);
    return out;
}

inline FlowSequence unify(const ControlBundle& bundle, ComposeMode mode = ComposeMode::Add) {
    auto rendered = render_controls(bundle);
    FlowSequence acc = std::move(rendered.front());
    for (std::size_t i = 1; i < rendered.size(); ++i) {
        acc = mode == ComposeMode::Add ? compose_add(acc, rendered[i]) : compose_chain(acc, rendered[i]);
    }
    return acc;
}

inline constexpr double kConflictMinMagnitude = 0.1;

/// Mean cosine similarity between every pair of rendered controls, per frame.
/// Only pixels where both flows exceed 0.1 px count. A frame with no such
/// pixel in any pair reports 0.
inline std::vector<double> conflict_report(const std::vector<FlowSequence>& rendered) {
    if (rendered.size() < 2) throw ArgumentError("conflict_report needs at least 2 controls");
    const int frames = rendered.front().count();
    std::vector<double> report(static_cast<std::size_t>(frames), 0.0);
    for (int l = 0; l < frames; ++l) {
        double pair_sum = 0.0;
        int pairs = 0;
        for (std::size_t a = 0; a < rendered.size(); ++a) {
            for (std::size_t b = a + 1; b < rendered.size(); ++b) {
                const auto& fa = rendered[a][l];
                const auto& fb = rendered[b][l];
                double sum = 0.0;
                long n = 0;
                for (std::size_t i = 0; i < fa.size(); ++i) {
                    const Flow2 va = fa.data()[i], vb = fb.data()[i];
                    const double na = va.norm(), nb = vb.norm();
                    if (na <= kConflictMinMagnitude || nb <= kConflictMinMagnitude) continue;
                    sum += std::clamp((va.u * vb.u + va.v * vb.v) / (na * nb), -1.0, 1.0);
                    ++n;
                }
                if (n > 0) {
                    pair_sum += sum / static_cast<double>(n);
                    ++pairs;
                }
            }
        }
        if (pairs > 0) report[static_cast<std::size_t>(l)] = pair_sum / pairs;
    }
    return report;
}

inline std::vector<double> conflict_report(const ControlBundle& bundle) {
    if (bundle.control_count() < 2) throw ArgumentError("conflict_report needs at least 2 controls");
    return conflict_report(render_controls(bundle));
}

} // namespace uniflow
