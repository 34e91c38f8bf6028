#pragma once

// JSON file formats: camera trajectories, annotation sets, control bundles.
// Parse errors carry a JSON pointer to the offending field.

#include "uniflow/annotation.hpp"
#include "uniflow/camera_geometry.hpp"
#include "uniflow/errors.hpp"
#include "uniflow/flow_core.hpp"
#include "uniflow/unified_flow.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace uniflow {

using nlohmann::json;

namespace schema {

inline std::string child(const std::string& path, const std::string& key) { return path + "/" + key; }
inline std::string child(const std::string& path, std::size_t i) { return path + "/" + std::to_string(i); }

inline const json& field(const json& obj, const std::string& key, const std::string& path) {
    if (!obj.is_object()) throw SchemaError(path.empty() ? "/" : path, "expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) throw SchemaError(child(path, key), "missing required field");
    return *it;
}

inline double number(const json& v, const std::string& path) {
    if (!v.is_number()) throw SchemaError(path, "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw SchemaError(path, "expected a finite number");
    return d;
}

inline int integer(const json& v, const std::string& path) {
    if (!v.is_number_integer()) throw SchemaError(path, "expected an integer");
    const auto i = v.get<long long>();
    if (i < std::numeric_limits<int>::min() || i > std::numeric_limits<int>::max()) {
        throw SchemaError(path, "integer out of range");
    }
    return static_cast<int>(i);
}

inline const json& array(const json& v, const std::string& path, std::size_t exact = 0) {
    if (!v.is_array()) throw SchemaError(path, "expected an array");
    if (exact != 0 && v.size() != exact) {
        throw SchemaError(path, "expected " + std::to_string(exact) + " elements");
    }
    return v;
}

inline std::string string(const json& v, const std::string& path) {
    if (!v.is_string()) throw SchemaError(path, "expected a string");
    return v.get<std::string>();
}

} // namespace schema

inline json load_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

inline void save_json_file(const json& j, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Camera trajectory: {"frames":[{"fx","fy","cx","cy","R":[9 row-major],"t":[3]}]}
// ---------------------------------------------------------------------------

inline CameraTrajectory parse_trajectory(const json& j, const std::string& path = "") {
    const auto fpath = schema::child(path, "frames");
    const json& frames = schema::array(schema::field(j, "frames", path), fpath);
    if (frames.empty()) throw SchemaError(fpath, "trajectory needs at least one frame");
    std::vector<CameraFrame> out;
    for (std::size_t i = 0; i < frames.size(); ++i) {
        const auto p = schema::child(fpath, i);
        const json& f = frames[i];
        CameraIntrinsics k;
        k.fx = schema::number(schema::field(f, "fx", p), schema::child(p, "fx"));
        k.fy = schema::number(schema::field(f, "fy", p), schema::child(p, "fy"));
        k.cx = schema::number(schema::field(f, "cx", p), schema::child(p, "cx"));
        k.cy = schema::number(schema::field(f, "cy", p), schema::child(p, "cy"));
        const json& r = schema::array(schema::field(f, "R", p), schema::child(p, "R"), 9);
        const json& t = schema::array(schema::field(f, "t", p), schema::child(p, "t"), 3);
        Eigen::Matrix3d rot;
        for (int e = 0; e < 9; ++e) {
            rot(e / 3, e % 3) = schema::number(r[static_cast<std::size_t>(e)], schema::child(schema::child(p, "R"), static_cast<std::size_t>(e)));
        }
        Eigen::Vector3d tr;
        for (int e = 0; e < 3; ++e) {
            tr[e] = schema::number(t[static_cast<std::size_t>(e)], schema::child(schema::child(p, "t"), static_cast<std::size_t>(e)));
        }
        try {
            out.push_back(make_camera_frame(rot, tr, k));
        } catch (const DataError& e) {
            throw SchemaError(p, e.what());
        }
    }
    return CameraTrajectory(std::move(out));
}

inline json trajectory_to_json(const CameraTrajectory& traj) {
    json frames = json::array();
    for (const auto& f : traj.frames()) {
        json r = json::array();
        for (int e = 0; e < 9; ++e) r.push_back(f.rotation(e / 3, e % 3));
        frames.push_back({{"fx", f.intrinsics.fx}, {"fy", f.intrinsics.fy},
                          {"cx", f.intrinsics.cx}, {"cy", f.intrinsics.cy},
                          {"R", r}, {"t", {f.translation.x(), f.translation.y(), f.translation.z()}}});
    }
    return {{"frames", frames}};
}

// ---------------------------------------------------------------------------
// Annotation: {"width":W,"height":H,"num_frames":L,"trajectories":[[[x,y],...],...]}
// ---------------------------------------------------------------------------

inline AnnotationSet parse_annotation(const json& j, const std::string& path = "") {
    AnnotationSet ann;
    ann.width = schema::integer(schema::field(j, "width", path), schema::child(path, "width"));
    ann.height = schema::integer(schema::field(j, "height", path), schema::child(path, "height"));
    ann.num_frames = schema::integer(schema::field(j, "num_frames", path), schema::child(path, "num_frames"));
    if (ann.width < 1) throw SchemaError(schema::child(path, "width"), "must be >= 1");
    if (ann.height < 1) throw SchemaError(schema::child(path, "height"), "must be >= 1");
    if (ann.num_frames < 2) throw SchemaError(schema::child(path, "num_frames"), "must be >= 2");

    const auto tpath = schema::child(path, "trajectories");
    const json& trajs = schema::array(schema::field(j, "trajectories", path), tpath);
    for (std::size_t t = 0; t < trajs.size(); ++t) {
        const auto tp = schema::child(tpath, t);
        const json& pts = schema::array(trajs[t], tp);
        if (pts.size() < 2) throw SchemaError(tp, "trajectory needs at least 2 points");
        DragTrajectory traj;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const auto pp = schema::child(tp, i);
            const json& xy = schema::array(pts[i], pp, 2);
            const Point2 p{schema::number(xy[0], schema::child(pp, std::size_t{0})),
                           schema::number(xy[1], schema::child(pp, std::size_t{1}))};
            if (p.x < 0.0 || p.x >= ann.width || p.y < 0.0 || p.y >= ann.height) {
                throw SchemaError(pp, "point lies outside the canvas");
            }
            traj.points.push_back(p);
        }
        ann.trajectories.push_back(std::move(traj));
    }
    return ann;
}

inline json annotation_to_json(const AnnotationSet& ann) {
    json trajs = json::array();
    for (const auto& t : ann.trajectories) {
        json pts = json::array();
        for (const auto& p : t.points) pts.push_back({p.x, p.y});
        trajs.push_back(pts);
    }
    return {{"width", ann.width}, {"height", ann.height}, {"num_frames", ann.num_frames},
            {"trajectories", trajs}};
}

// ---------------------------------------------------------------------------
// Depth: {"kind":"constant","value":d} | {"kind":"fronto-ramp","near":a,"far":b}
//             | {"file":"depth.pfm"}
// ---------------------------------------------------------------------------

inline DepthMap parse_depth(const json& j, int width, int height, const std::string& path,
                            const std::filesystem::path& base_dir, bool allow_files) {
    if (j.is_object() && j.contains("file")) {
        if (!allow_files) throw SchemaError(schema::child(path, "file"), "file references are not accepted here");
        const auto file = base_dir / schema::string(j.at("file"), schema::child(path, "file"));
        DepthMap d = read_pfm(file);
        if (d.width != width || d.height != height) throw SchemaError(path, "depth file size differs from bundle size");
        return d;
    }
    const std::string kind = schema::string(schema::field(j, "kind", path), schema::child(path, "kind"));
    DepthProxy proxy;
    if (kind == "constant") {
        proxy = DepthProxy::constant(schema::number(schema::field(j, "value", path), schema::child(path, "value")));
    } else if (kind == "fronto-ramp") {
        proxy = DepthProxy::ramp(schema::number(schema::field(j, "near", path), schema::child(path, "near")),
                                 schema::number(schema::field(j, "far", path), schema::child(path, "far")));
    } else {
        throw SchemaError(schema::child(path, "kind"), "unknown depth kind '" + kind + "'");
    }
    try {
        return depth_proxy(proxy, width, height);
    } catch (const ArgumentError& e) {
        throw SchemaError(path, e.what());
    }
}

inline ComposeMode parse_mode(const std::string& s, const std::string& path = "/mode") {
    if (s == "add") return ComposeMode::Add;
    if (s == "chain") return ComposeMode::Chain;
    throw SchemaError(path, "mode must be 'add' or 'chain'");
}

struct BundleSpec {
    ControlBundle bundle;
    ComposeMode mode = ComposeMode::Add;
};

/// Parses a control bundle. Sub-documents may be inlined objects or, when
/// `allow_files` is set, paths relative to `base_dir`.
///
/// {"width","height","num_frames","mode","sigma",
///  "camera":{"trajectory":<obj|path>,"depth":<depth>},
///  "annotation":<obj|path>, "reference":<dir|[.flo paths]>}
inline BundleSpec parse_bundle(const json& j, const std::filesystem::path& base_dir = {},
                               bool allow_files = true) {
    BundleSpec spec;
    auto& b = spec.bundle;
    b.width = schema::integer(schema::field(j, "width", ""), "/width");
    b.height = schema::integer(schema::field(j, "height", ""), "/height");
    b.num_frames = schema::integer(schema::field(j, "num_frames", ""), "/num_frames");
    if (b.width < 1) throw SchemaError("/width", "must be >= 1");
    if (b.height < 1) throw SchemaError("/height", "must be >= 1");
    if (b.num_frames < 2) throw SchemaError("/num_frames", "must be >= 2");
    if (j.contains("mode")) spec.mode = parse_mode(schema::string(j.at("mode"), "/mode"));
    if (j.contains("sigma")) {
        const double s = schema::number(j.at("sigma"), "/sigma");
        if (!(s > 0.0)) throw SchemaError("/sigma", "must be > 0");
        b.sigma = s;
    }

    auto load_doc = [&](const json& v, const std::string& path) -> std::pair<json, std::string> {
        if (v.is_string()) {
            if (!allow_files) throw SchemaError(path, "file references are not accepted here");
            return {load_json_file(base_dir / v.get<std::string>()), ""};
        }
        return {v, path};
    };

    if (j.contains("camera") && !j.at("camera").is_null()) {
        const json& cam = j.at("camera");
        auto [tdoc, tpath] = load_doc(schema::field(cam, "trajectory", "/camera"), "/camera/trajectory");
        CameraControl cc;
        cc.trajectory = parse_trajectory(tdoc, tpath);
        cc.depth = parse_depth(schema::field(cam, "depth", "/camera"), b.width, b.height, "/camera/depth",
                               base_dir, allow_files);
        b.camera = std::move(cc);
    }
    if (j.contains("annotation") && !j.at("annotation").is_null()) {
        auto [adoc, apath] = load_doc(j.at("annotation"), "/annotation");
        b.drags = parse_annotation(adoc, apath);
    }
    if (j.contains("reference") && !j.at("reference").is_null()) {
        if (!allow_files) throw SchemaError("/reference", "file references are not accepted here");
        const json& r = j.at("reference");
        if (r.is_string()) {
            b.reference = read_flo_sequence(base_dir / r.get<std::string>());
        } else {
            const json& arr = schema::array(r, "/reference");
            std::vector<std::filesystem::path> files;
            for (std::size_t i = 0; i < arr.size(); ++i) {
                files.push_back(base_dir / schema::string(arr[i], schema::child("/reference", i)));
            }
            b.reference = read_flo_list(files);
        }
    }
    try {
        b.validate();
    } catch (const ConfigError& e) {
        const std::string& c = e.control();
        throw SchemaError(c.empty() ? "/" : c == "drags" ? "/annotation" : "/" + c, e.what());
    }
    return spec;
}

inline BundleSpec load_bundle(const std::filesystem::path& path) {
    return parse_bundle(load_json_file(path), path.parent_path());
}

} // namespace uniflow
