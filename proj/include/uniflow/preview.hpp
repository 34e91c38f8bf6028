#pragma once

// Request handlers of the preview service. They take and return plain JSON
// text so they can be exercised without a socket; the HTTP layer only routes.

#include "uniflow/errors.hpp"
#include "uniflow/flow_core.hpp"
#include "uniflow/image_io.hpp"
#include "uniflow/json_io.hpp"
#include "uniflow/spectral_stab.hpp"
#include "uniflow/unified_flow.hpp"

#include <openssl/evp.h>

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace uniflow {

inline std::string base64_encode(std::span<const std::uint8_t> bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

inline std::vector<std::uint8_t> base64_decode(const std::string& text) {
    if (text.size() % 4 != 0) throw FormatError("base64 length is not a multiple of 4");
    std::vector<std::uint8_t> out(3 * (text.size() / 4));
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                  static_cast<int>(text.size()));
    if (n < 0) throw FormatError("invalid base64");
    std::size_t pad = 0;
    if (!text.empty() && text.back() == '=') ++pad;
    if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
    out.resize(static_cast<std::size_t>(n) - pad);
    return out;
}

struct PreviewLimits {
    int max_width = 512;
    int max_height = 512;
    int max_frames = 64;
};

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    PreviewLimits limits;
    /// Densifier bandwidth used when a request does not carry one.
    std::optional<double> sigma;
};

/// Reads {"host","port","sigma","limits":{"max_width","max_height","max_frames"}};
/// every key is optional.
inline ServiceConfig parse_service_config(const json& j) {
    ServiceConfig c;
    if (!j.is_object()) throw SchemaError("/", "expected an object");
    if (j.contains("host")) c.host = schema::string(j.at("host"), "/host");
    if (j.contains("port")) c.port = schema::integer(j.at("port"), "/port");
    if (j.contains("sigma")) {
        c.sigma = schema::number(j.at("sigma"), "/sigma");
        if (!(*c.sigma > 0.0)) throw SchemaError("/sigma", "must be > 0");
    }
    if (j.contains("limits")) {
        const json& l = j.at("limits");
        if (l.contains("max_width")) c.limits.max_width = schema::integer(l.at("max_width"), "/limits/max_width");
        if (l.contains("max_height")) c.limits.max_height = schema::integer(l.at("max_height"), "/limits/max_height");
        if (l.contains("max_frames")) c.limits.max_frames = schema::integer(l.at("max_frames"), "/limits/max_frames");
    }
    if (c.port < 0 || c.port > 65535) throw SchemaError("/port", "port out of range");
    return c;
}

/// UNIFLOW_PORT, when set, wins over the configured port.
inline void apply_port_env(ServiceConfig& c) {
    if (const char* p = std::getenv("UNIFLOW_PORT"); p && *p) {
        char* end = nullptr;
        const long v = std::strtol(p, &end, 10);
        if (*end != '\0' || v < 0 || v > 65535) throw ConfigError(std::string("bad UNIFLOW_PORT: ") + p);
        c.port = static_cast<int>(v);
    }
}

struct PreviewResponse {
    int status = 200;
    std::string body;
};

namespace detail {

inline PreviewResponse json_response(int status, const json& j) { return {status, j.dump()}; }

inline PreviewResponse error_response(int status, const std::string& message, const std::string& path = {}) {
    json j = {{"error", message}};
    if (!path.empty()) j["path"] = path;
    return json_response(status, j);
}

// Stable FNV-1a so the opaque id of a failing request is reproducible.
inline std::string opaque_id(const std::string& body) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : body) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

struct PreparedFlow {
    json request;
    BundleSpec spec;
    FlowSequence flow;
};

inline void check_limits(const json& j, const PreviewLimits& lim) {
    auto dim = [&](const char* key) -> long long {
        auto it = j.find(key);
        return it != j.end() && it->is_number_integer() ? it->get<long long>() : 0;
    };
    if (dim("width") > lim.max_width || dim("height") > lim.max_height || dim("num_frames") > lim.max_frames) {
        throw std::length_error("request exceeds " + std::to_string(lim.max_width) + "x" +
                                std::to_string(lim.max_height) + "x" + std::to_string(lim.max_frames));
    }
}

inline PreparedFlow prepare_flow(const std::string& body, const ServiceConfig& cfg) {
    PreparedFlow p;
    try {
        p.request = json::parse(body);
    } catch (const json::parse_error& e) {
        throw SchemaError("/", std::string("invalid JSON: ") + e.what());
    }
    if (!p.request.is_object()) throw SchemaError("/", "expected an object");
    check_limits(p.request, cfg.limits);
    p.spec = parse_bundle(p.request, {}, false);
    if (!p.spec.bundle.sigma && cfg.sigma) p.spec.bundle.sigma = cfg.sigma;
    p.flow = unify(p.spec.bundle, p.spec.mode);
    if (p.request.contains("stabilize") && !p.request.at("stabilize").is_null()) {
        const auto name = schema::string(p.request.at("stabilize"), "/stabilize");
        SpectralWeights w;
        try {
            w = named_filter(name, p.flow.count());
        } catch (const ArgumentError& e) {
            throw SchemaError("/stabilize", e.what());
        }
        p.flow = stabilize_flow(p.flow, w);
    }
    return p;
}

template <class F>
PreviewResponse guarded(const std::string& body, F&& handler) {
    try {
        return handler();
    } catch (const std::length_error& e) {
        return error_response(413, e.what());
    } catch (const SchemaError& e) {
        return error_response(400, e.what(), e.path());
    } catch (const std::exception&) {
        return error_response(500, "internal error " + opaque_id(body));
    }
}

} // namespace detail

inline PreviewResponse preview_health() { return detail::json_response(200, {{"status", "ok"}}); }

/// Body: an inline control bundle plus optional "stabilize" (filter name)
/// and "include_flo" (adds base64 .flo bytes per frame).
inline PreviewResponse preview_flow(const std::string& body, const ServiceConfig& cfg = {}) {
    return detail::guarded(body, [&] {
        auto p = detail::prepare_flow(body, cfg);
        const double vmax = max_magnitude(p.flow);
        const std::optional<double> scale = vmax > 0.0 ? std::optional<double>(vmax) : std::nullopt;
        json frames = json::array();
        json flo = json::array();
        const bool want_flo = p.request.value("include_flo", false);
        for (const auto& f : p.flow.frames()) {
            frames.push_back(base64_encode(encode_png(flow_to_color(f, scale))));
            if (want_flo) flo.push_back(base64_encode(encode_flo(f)));
        }
        json stats = {{"max_magnitude", vmax}};
        stats["flicker"] = p.flow.count() >= 3 ? json(flicker_metric(p.flow)) : json(nullptr);
        stats["conflict"] = p.spec.bundle.control_count() >= 2 ? json(conflict_report(p.spec.bundle)) : json(nullptr);
        json out = {{"frames", frames}, {"stats", stats}};
        if (want_flo) out["flo"] = flo;
        return detail::json_response(200, out);
    });
}

/// Body: as preview_flow plus "image", a base64 PNG of the bundle size.
inline PreviewResponse preview_warp(const std::string& body, const ServiceConfig& cfg = {}) {
    return detail::guarded(body, [&] {
        auto p = detail::prepare_flow(body, cfg);
        const auto& req = p.request;
        const auto b64 = schema::string(schema::field(req, "image", ""), "/image");
        Image img;
        try {
            img = decode_png(base64_decode(b64));
        } catch (const DataError& e) {
            throw SchemaError("/image", e.what());
        }
        if (img.width != p.spec.bundle.width || img.height != p.spec.bundle.height) {
            throw SchemaError("/image", "image size differs from bundle size");
        }
        json frames = json::array();
        for (const auto& f : p.flow.frames()) frames.push_back(base64_encode(encode_png(warp_backward(img, f))));
        return detail::json_response(200, {{"frames", frames}});
    });
}

} // namespace uniflow
