#pragma once

// Seeded generators shared by the unit tests and the acceptance binary.

#include "uniflow/camera_geometry.hpp"
#include "uniflow/flow_core.hpp"

#include <Eigen/Geometry>

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>

namespace testkit {

struct Gen {
    std::mt19937_64 rng;
    explicit Gen(std::uint64_t seed) : rng(seed) {}

    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
    int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
    double normal() { return std::normal_distribution<double>(0.0, 1.0)(rng); }

    /// Values representable as float32, so .flo round trips are exact.
    float f32(double lo, double hi) { return static_cast<float>(uniform(lo, hi)); }

    uniflow::FlowField field(int w, int h, double scale = 10.0) {
        uniflow::FlowField f(w, h);
        for (auto& v : f.data()) v = {f32(-scale, scale), f32(-scale, scale)};
        return f;
    }

    uniflow::FlowSequence sequence(int w, int h, int n, double scale = 10.0) {
        std::vector<uniflow::FlowField> frames;
        for (int i = 0; i < n; ++i) frames.push_back(field(w, h, scale));
        return uniflow::FlowSequence(std::move(frames));
    }

    Eigen::Matrix3d rotation(double max_angle = 3.14159) {
        Eigen::Vector3d axis(normal(), normal(), normal());
        axis.normalize();
        return Eigen::AngleAxisd(uniform(-max_angle, max_angle), axis).toRotationMatrix();
    }

    Eigen::Vector3d vec3(double scale) { return {uniform(-scale, scale), uniform(-scale, scale), uniform(-scale, scale)}; }

    uniflow::CameraIntrinsics intrinsics(int w, int h) {
        return {uniform(0.8, 1.5) * w, uniform(0.8, 1.5) * w, uniform(0.4, 0.6) * w, uniform(0.4, 0.6) * h};
    }
};

inline uniflow::CameraFrame frame(const Eigen::Matrix3d& r, const Eigen::Vector3d& t, uniflow::CameraIntrinsics k) {
    return uniflow::make_camera_frame(r, t, k);
}

/// Scratch directory removed at scope exit.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        static std::uint64_t counter = 0;
        std::random_device rd;
        path = std::filesystem::temp_directory_path() /
               ("uniflow-" + tag + "-" + std::to_string(rd()) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    std::filesystem::path operator/(const std::string& s) const { return path / s; }
};

struct RunResult {
    int code = -1;
    std::string out;
};

/// Runs a shell command, capturing stdout (stderr merged).
inline RunResult run(const std::string& cmd) {
    RunResult r;
    FILE* p = popen((cmd + " 2>&1").c_str(), "r");
    if (!p) return r;
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) r.out.append(buf, n);
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

} // namespace testkit
