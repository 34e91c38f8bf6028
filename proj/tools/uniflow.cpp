// uniflow command-line front end and preview server.

#include "uniflow/annotation.hpp"
#include "uniflow/camera_geometry.hpp"
#include "uniflow/diffusion_toy.hpp"
#include "uniflow/errors.hpp"
#include "uniflow/eval_metrics.hpp"
#include "uniflow/flow_codec.hpp"
#include "uniflow/flow_core.hpp"
#include "uniflow/image_io.hpp"
#include "uniflow/json_io.hpp"
#include "uniflow/neural_toy.hpp"
#include "uniflow/preview.hpp"
#include "uniflow/spectral_stab.hpp"
#include "uniflow/toy_config.hpp"
#include "uniflow/unified_flow.hpp"

#include <CLI11.hpp>
#include <httplib.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace uniflow;

namespace {

struct Common {
    std::uint64_t seed = 0;
    std::string config;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--seed", c.seed, "Seed for every random stream of the run");
    sub->add_option("--config", c.config, "JSON defaults file (sigma, limits, host, port)");
}

ServiceConfig load_defaults(const Common& c) {
    if (c.config.empty()) return {};
    return parse_service_config(load_json_file(c.config));
}

/// "constant:Z", "ramp:NEAR:FAR" or a .pfm path.
DepthMap depth_from_arg(const std::string& arg, int width, int height) {
    auto parts = [&] {
        std::vector<std::string> out;
        std::stringstream ss(arg);
        for (std::string p; std::getline(ss, p, ':');) out.push_back(p);
        return out;
    }();
    auto num = [&](const std::string& s) {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(s, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != s.size() || s.empty()) throw ArgumentError("--depth: bad number '" + s + "'");
        return v;
    };
    if (parts.size() == 2 && parts[0] == "constant") return depth_proxy(DepthProxy::constant(num(parts[1])), width, height);
    if (parts.size() == 3 && parts[0] == "ramp") {
        return depth_proxy(DepthProxy::ramp(num(parts[1]), num(parts[2])), width, height);
    }
    DepthMap d = read_pfm(arg);
    if (d.width != width || d.height != height) throw DimensionError("--depth: map size differs from --width/--height");
    return d;
}

/// A directory of .flo files, or one or more .flo paths.
FlowSequence read_flow_input(const std::vector<std::string>& inputs) {
    if (inputs.size() == 1 && fs::is_directory(inputs.front())) return read_flo_sequence(inputs.front());
    std::vector<fs::path> files(inputs.begin(), inputs.end());
    return read_flo_list(files);
}

/// Named filter, or a JSON file {"weights":[...], "channels":0}.
SpectralWeights filter_from_arg(const std::string& arg, int frames) {
    if (fs::is_regular_file(arg)) {
        const json j = load_json_file(arg);
        SpectralWeights w;
        const json& arr = schema::array(schema::field(j, "weights", ""), "/weights");
        for (std::size_t i = 0; i < arr.size(); ++i) w.w.push_back(schema::number(arr[i], schema::child("/weights", i)));
        if (j.contains("channels")) w.channels = schema::integer(j.at("channels"), "/channels");
        return w;
    }
    return named_filter(arg, frames);
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

int run_server(ServiceConfig cfg) {
    httplib::Server server;
    auto reply = [](httplib::Response& res, const PreviewResponse& p) {
        res.status = p.status;
        res.set_content(p.body, "application/json");
    };
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
        res.status = 204;
    });
    server.Get("/health", [&](const httplib::Request&, httplib::Response& res) { reply(res, preview_health()); });
    server.Post("/preview/flow", [&](const httplib::Request& req, httplib::Response& res) {
        reply(res, preview_flow(req.body, cfg));
    });
    server.Post("/preview/warp", [&](const httplib::Request& req, httplib::Response& res) {
        reply(res, preview_warp(req.body, cfg));
    });
    int port = cfg.port;
    if (port == 0) {
        port = server.bind_to_any_port(cfg.host);
    } else if (!server.bind_to_port(cfg.host, port)) {
        port = -1;
    }
    if (port < 0) throw IoError("cannot bind " + cfg.host + ":" + std::to_string(cfg.port));
    std::cout << "listening on " << cfg.host << ":" << port << std::endl;
    server.listen_after_bind();
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"uniflow: unified motion-control flow engine"};
    app.require_subcommand(1);
    Common common;

    // camera-flow
    auto* cam = app.add_subcommand("camera-flow", "Dense flow induced by a camera trajectory over a depth map");
    std::string cam_traj, cam_depth, cam_out, cam_plucker, cam_plucker_mode = "literal";
    int cam_w = 0, cam_h = 0;
    cam->add_option("--trajectory", cam_traj, "Camera trajectory JSON")->required();
    cam->add_option("--depth", cam_depth, "constant:Z | ramp:NEAR:FAR | depth.pfm")->required();
    cam->add_option("--width", cam_w, "Frame width")->required();
    cam->add_option("--height", cam_h, "Frame height")->required();
    cam->add_option("--out", cam_out, "Output directory of .flo frames")->required();
    cam->add_option("--plucker", cam_plucker, "Also write the Pluecker volume (float64, 6xFxHxW) here");
    cam->add_option("--plucker-mode", cam_plucker_mode, "literal | conventional")
        ->check(CLI::IsMember({"literal", "conventional"}));
    add_common(cam, common);

    // drag-flow
    auto* drag = app.add_subcommand("drag-flow", "Dense flow from drag annotations");
    std::string drag_ann, drag_out;
    std::optional<double> drag_sigma;
    drag->add_option("--annotation", drag_ann, "Annotation JSON")->required();
    drag->add_option("--sigma", drag_sigma, "Densifier bandwidth in pixels");
    drag->add_option("--out", drag_out, "Output directory of .flo frames")->required();
    add_common(drag, common);

    // unify
    auto* uni = app.add_subcommand("unify", "Compose every control of a bundle into one flow sequence");
    std::string uni_bundle, uni_out, uni_mode, uni_report;
    double uni_noise = 0.0;
    uni->add_option("--bundle", uni_bundle, "Bundle JSON")->required();
    uni->add_option("--mode", uni_mode, "add | chain (overrides the bundle)")->check(CLI::IsMember({"add", "chain"}));
    uni->add_option("--out", uni_out, "Output directory of .flo frames")->required();
    uni->add_option("--report", uni_report, "Write the per-frame conflict report (JSON)");
    uni->add_option("--noise", uni_noise, "Gaussian noise sigma added to the result, seeded by --seed")
        ->check(CLI::NonNegativeNumber);
    add_common(uni, common);

    // stabilize
    auto* stab = app.add_subcommand("stabilize", "Temporal spectral reweighting of a flow sequence");
    std::vector<std::string> stab_in;
    std::string stab_filter, stab_out;
    stab->add_option("--input", stab_in, "Directory of .flo frames or a list of .flo files")->required();
    stab->add_option("--filter", stab_filter, "identity | dc-only | lowpass:K | weights JSON")->required();
    stab->add_option("--out", stab_out, "Output directory")->required();
    add_common(stab, common);

    // codec
    auto* codec = app.add_subcommand("codec", "Block codec between flow sequences and latent grids");
    codec->require_subcommand(1);
    auto* enc = codec->add_subcommand("encode", "Flow frames to a latent file");
    std::vector<std::string> enc_in;
    std::string enc_out;
    enc->add_option("--input", enc_in, "Directory of .flo frames or a list of .flo files")->required();
    enc->add_option("--out", enc_out, "Latent file")->required();
    add_common(enc, common);
    auto* dec = codec->add_subcommand("decode", "Latent file to flow frames");
    std::string dec_in, dec_out;
    dec->add_option("--input", dec_in, "Latent file")->required();
    dec->add_option("--out", dec_out, "Output directory")->required();
    add_common(dec, common);

    // toy-train
    auto* ttrain = app.add_subcommand("toy-train", "Train the toy flow-latent denoiser");
    std::string tt_cfg, tt_out, tt_csv;
    ttrain->add_option("--run", tt_cfg, "Run configuration JSON (schedule, model, train, dataset)");
    ttrain->add_option("--out", tt_out, "Checkpoint path")->required();
    ttrain->add_option("--loss-csv", tt_csv, "Per-step loss curve CSV");
    add_common(ttrain, common);

    // toy-sample
    auto* tsample = app.add_subcommand("toy-sample", "Draw latents from a trained toy denoiser");
    std::string ts_ckpt, ts_cfg, ts_out;
    int ts_count = 200;
    tsample->add_option("--checkpoint", ts_ckpt, "Checkpoint written by toy-train")->required();
    tsample->add_option("--run", ts_cfg, "Run configuration JSON used for training");
    tsample->add_option("--count", ts_count, "Number of samples")->check(CLI::PositiveNumber);
    tsample->add_option("--out", ts_out, "CSV of samples")->required();
    add_common(tsample, common);

    // eval-traj
    auto* evt = app.add_subcommand("eval-traj", "Rotation and translation error of a camera trajectory");
    std::string ev_pred, ev_gt, ev_out, ev_method = "method", ev_sampling = "none";
    evt->add_option("--pred", ev_pred, "Predicted trajectory JSON")->required();
    evt->add_option("--gt", ev_gt, "Ground-truth trajectory JSON")->required();
    evt->add_option("--sampling", ev_sampling, "none | basic | difficult (subsamples --gt to --pred's length)")
        ->check(CLI::IsMember({"none", "basic", "difficult"}));
    evt->add_option("--method", ev_method, "Method label for the report");
    evt->add_option("--out", ev_out, "CSV report (appended)");
    add_common(evt, common);

    // viz
    auto* viz = app.add_subcommand("viz", "Color-code flow frames as PNG");
    std::vector<std::string> viz_in;
    std::string viz_out;
    std::optional<double> viz_max;
    viz->add_option("--input", viz_in, "Directory of .flo frames or a list of .flo files")->required();
    viz->add_option("--out", viz_out, "Output directory of PNG frames")->required();
    viz->add_option("--max", viz_max, "Magnitude mapped to full saturation (default: sequence maximum)");
    add_common(viz, common);

    // serve
    auto* serve = app.add_subcommand("serve", "Run the HTTP preview service");
    std::optional<int> serve_port;
    std::string serve_host;
    serve->add_option("--port", serve_port, "Port (0 picks a free one; UNIFLOW_PORT overrides the config)");
    serve->add_option("--host", serve_host, "Bind address");
    add_common(serve, common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        const ServiceConfig defaults = load_defaults(common);

        if (*cam) {
            const auto traj = parse_trajectory(load_json_file(cam_traj));
            const auto depth = depth_from_arg(cam_depth, cam_w, cam_h);
            write_flo_sequence(camera_flow(traj, depth, cam_w, cam_h), cam_out);
            if (!cam_plucker.empty()) {
                const auto mode = cam_plucker_mode == "literal" ? PluckerMode::Literal : PluckerMode::Conventional;
                const auto vol = plucker_embed(traj, cam_w, cam_h, mode);
                std::vector<std::uint8_t> bytes;
                bytes.reserve(vol.data.size() * 8);
                for (double v : vol.data) {
                    const auto bits = std::bit_cast<std::uint64_t>(v);
                    for (int b = 0; b < 8; ++b) bytes.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
                }
                detail::write_file_bytes(cam_plucker, bytes);
            }
        } else if (*drag) {
            const auto ann = parse_annotation(load_json_file(drag_ann));
            write_flo_sequence(drag_flow(ann, drag_sigma ? drag_sigma : defaults.sigma), drag_out);
        } else if (*uni) {
            auto spec = load_bundle(uni_bundle);
            if (!uni_mode.empty()) spec.mode = parse_mode(uni_mode);
            if (!spec.bundle.sigma) spec.bundle.sigma = defaults.sigma;
            auto flow = unify(spec.bundle, spec.mode);
            if (uni_noise > 0.0) flow = add_flow_noise(flow, uni_noise, common.seed);
            write_flo_sequence(flow, uni_out);
            if (!uni_report.empty()) {
                json r = {{"controls", spec.bundle.control_count()}};
                r["conflict"] = spec.bundle.control_count() >= 2 ? json(conflict_report(spec.bundle)) : json(nullptr);
                write_text(uni_report, r.dump(2) + "\n");
            }
        } else if (*stab) {
            const auto seq = read_flow_input(stab_in);
            const auto out = stabilize_flow(seq, filter_from_arg(stab_filter, seq.count()));
            write_flo_sequence(out, stab_out);
            if (seq.count() >= 3) {
                std::cout << "flicker_before " << fmt(flicker_metric(seq)) << "\n"
                          << "flicker_after " << fmt(flicker_metric(out)) << "\n";
            } else {
                std::cout << "flicker_before n/a\nflicker_after n/a\n";
            }
        } else if (*enc) {
            const auto lat = encode(read_flow_input(enc_in));
            if (fs::path(enc_out).has_parent_path()) fs::create_directories(fs::path(enc_out).parent_path());
            write_latent(lat, enc_out);
        } else if (*dec) {
            write_flo_sequence(decode(read_latent(dec_in)), dec_out);
        } else if (*ttrain) {
            ToyRunConfig cfg = tt_cfg.empty() ? ToyRunConfig{} : parse_toy_config(load_json_file(tt_cfg));
            if (ttrain->count("--seed") > 0) cfg = with_seed(cfg, common.seed);
            const auto dataset = make_mode_dataset(cfg.dataset);
            const auto init = ToyDenoiser::init(cfg.dims(), cfg.init_seed());
            const auto res = train(init, dataset, cfg.schedule(), cfg.train);
            save_checkpoint({res.model, cfg.seed, cfg.train.steps}, tt_out);
            if (!tt_csv.empty()) {
                std::string csv = "step,loss\n";
                for (std::size_t i = 0; i < res.loss_curve.size(); ++i) {
                    csv += std::to_string(i) + "," + fmt(res.loss_curve[i]) + "\n";
                }
                write_text(tt_csv, csv);
            }
            if (!res.loss_curve.empty()) {
                std::cout << "final_loss " << fmt(res.loss_curve.back()) << "\n";
            }
        } else if (*tsample) {
            ToyRunConfig cfg = ts_cfg.empty() ? ToyRunConfig{} : parse_toy_config(load_json_file(ts_cfg));
            const auto ckpt = load_checkpoint(ts_ckpt);
            const auto samples = sample(ckpt.model, cfg.schedule(), ts_count, common.seed);
            std::string csv;
            for (int d = 0; d < ckpt.model.dims.data_dim; ++d) csv += (d ? ",z" : "z") + std::to_string(d);
            csv += "\n";
            for (const auto& s : samples) {
                for (Eigen::Index d = 0; d < s.size(); ++d) csv += (d ? "," : "") + fmt(s[d]);
                csv += "\n";
            }
            write_text(ts_out, csv);
            std::cout << "purity " << fmt(mode_purity(samples, mode_latents(cfg.dataset), 0.5)) << "\n";
        } else if (*evt) {
            const PoseTrajectory pred(parse_trajectory(load_json_file(ev_pred)));
            PoseTrajectory gt(parse_trajectory(load_json_file(ev_gt)));
            if (ev_sampling != "none") {
                const auto mode = ev_sampling == "basic" ? SamplingMode::Basic : SamplingMode::Difficult;
                gt = sample_trajectory(gt, mode, pred.size());
            }
            const double terr = translation_error(pred, gt);
            const double rerr = rotation_error(pred, gt);
            std::cout << "T-Err " << fmt(terr) << "\nR-Err " << fmt(rerr) << "\n";
            if (!ev_out.empty()) {
                const bool fresh = !fs::exists(ev_out);
                std::ofstream out(ev_out, std::ios::app);
                if (!out) throw IoError("cannot write " + ev_out);
                if (fresh) out << "method,trajectory,T-Err,R-Err\n";
                out << ev_method << "," << ev_sampling << "," << fmt(terr) << "," << fmt(rerr) << "\n";
            }
        } else if (*viz) {
            const auto seq = read_flow_input(viz_in);
            double vmax = viz_max ? *viz_max : max_magnitude(seq);
            const std::optional<double> scale = vmax > 0.0 ? std::optional<double>(vmax) : std::nullopt;
            if (viz_max && !(*viz_max > 0.0)) throw ArgumentError("--max must be positive");
            fs::create_directories(viz_out);
            for (int l = 0; l < seq.count(); ++l) {
                char name[32];
                std::snprintf(name, sizeof name, "frame_%04d.png", l + 1);
                write_png(flow_to_color(seq[l], scale), fs::path(viz_out) / name);
            }
        } else if (*serve) {
            ServiceConfig cfg = defaults;
            apply_port_env(cfg);
            if (serve_port) cfg.port = *serve_port;
            if (!serve_host.empty()) cfg.host = serve_host;
            return run_server(cfg);
        }
    } catch (const ArgumentError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
