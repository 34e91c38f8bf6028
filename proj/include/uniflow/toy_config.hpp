#pragma once

#include "uniflow/diffusion_toy.hpp"
#include "uniflow/json_io.hpp"
#include "uniflow/neural_toy.hpp"

#include <cstdint>

namespace uniflow {

inline TrainConfig reference_train_config() {
    TrainConfig t;
    t.batch_size = 256;
    t.adam.lr = 3e-3;
    return t;
}

/// One toy diffusion run: schedule, network size, optimizer and dataset.
/// Defaults are the reference two-mode run.
struct ToyRunConfig {
    int schedule_steps = 100;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    int hidden = 64;
    int time_dim = 32;
    TrainConfig train = reference_train_config();
    ModeDatasetSpec dataset;
    std::uint64_t seed = 0;

    NoiseSchedule schedule() const { return NoiseSchedule::linear(schedule_steps, beta_start, beta_end); }

    DenoiserDims dims() const {
        DenoiserDims d;
        const LatentGrid probe = mode_latent(dataset.modes.front(), dataset.flow_frames, dataset.width, dataset.height);
        d.data_dim = static_cast<int>(probe.flat().size());
        d.time_dim = time_dim;
        d.hidden = hidden;
        d.cond_dim = dataset.cond_sigma ? 2 : 0;
        return d;
    }

    /// Streams derived from the run seed: init, dataset noise, training, sampling.
    std::uint64_t init_seed() const { return seed; }
    std::uint64_t dataset_seed() const { return seed + 1; }
    std::uint64_t train_seed() const { return seed + 2; }
};

inline std::vector<Eigen::VectorXd> mode_latents(const ModeDatasetSpec& spec) {
    std::vector<Eigen::VectorXd> out;
    for (const auto& m : spec.modes) out.push_back(mode_latent(m, spec.flow_frames, spec.width, spec.height).flat());
    return out;
}

/// Applies the run seed to every derived stream.
inline ToyRunConfig with_seed(ToyRunConfig c, std::uint64_t seed) {
    c.seed = seed;
    c.dataset.seed = c.dataset_seed();
    c.train.seed = c.train_seed();
    return c;
}

/// {"seed", "schedule":{"steps","beta_start","beta_end"}, "model":{"hidden","time_dim"},
///  "train":{"steps","batch_size","lr"},
///  "dataset":{"modes":[[u,v],...],"count","flow_frames","width","height","cond_sigma"}}
inline ToyRunConfig parse_toy_config(const json& j) {
    ToyRunConfig c;
    if (!j.is_object()) throw SchemaError("/", "expected an object");
    auto opt_int = [](const json& o, const char* key, const std::string& path, int& dst) {
        if (o.contains(key)) dst = schema::integer(o.at(key), schema::child(path, key));
    };
    auto opt_num = [](const json& o, const char* key, const std::string& path, double& dst) {
        if (o.contains(key)) dst = schema::number(o.at(key), schema::child(path, key));
    };
    if (j.contains("seed")) {
        const int s = schema::integer(j.at("seed"), "/seed");
        if (s < 0) throw SchemaError("/seed", "must be >= 0");
        c.seed = static_cast<std::uint64_t>(s);
    }
    if (j.contains("schedule")) {
        const json& s = j.at("schedule");
        opt_int(s, "steps", "/schedule", c.schedule_steps);
        opt_num(s, "beta_start", "/schedule", c.beta_start);
        opt_num(s, "beta_end", "/schedule", c.beta_end);
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        opt_int(m, "hidden", "/model", c.hidden);
        opt_int(m, "time_dim", "/model", c.time_dim);
        if (c.hidden < 1) throw SchemaError("/model/hidden", "must be >= 1");
        if (c.time_dim < 2 || c.time_dim % 2 != 0) throw SchemaError("/model/time_dim", "must be even and >= 2");
    }
    if (j.contains("train")) {
        const json& t = j.at("train");
        opt_int(t, "steps", "/train", c.train.steps);
        opt_int(t, "batch_size", "/train", c.train.batch_size);
        opt_num(t, "lr", "/train", c.train.adam.lr);
        if (c.train.steps < 0) throw SchemaError("/train/steps", "must be >= 0");
        if (c.train.batch_size < 1) throw SchemaError("/train/batch_size", "must be >= 1");
    }
    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        auto& ds = c.dataset;
        if (d.contains("modes")) {
            const json& m = schema::array(d.at("modes"), "/dataset/modes");
            if (m.empty()) throw SchemaError("/dataset/modes", "need at least one mode");
            ds.modes.clear();
            for (std::size_t i = 0; i < m.size(); ++i) {
                const auto p = schema::child("/dataset/modes", i);
                const json& uv = schema::array(m[i], p, 2);
                ds.modes.push_back({schema::number(uv[0], p + "/0"), schema::number(uv[1], p + "/1")});
            }
        }
        opt_int(d, "count", "/dataset", ds.count);
        opt_int(d, "flow_frames", "/dataset", ds.flow_frames);
        opt_int(d, "width", "/dataset", ds.width);
        opt_int(d, "height", "/dataset", ds.height);
        if (d.contains("cond_sigma") && !d.at("cond_sigma").is_null()) {
            ds.cond_sigma = schema::number(d.at("cond_sigma"), "/dataset/cond_sigma");
            if (*ds.cond_sigma < 0.0) throw SchemaError("/dataset/cond_sigma", "must be >= 0");
        }
        if (ds.count < 1) throw SchemaError("/dataset/count", "must be >= 1");
        if (ds.flow_frames < 1 || ds.width < 1 || ds.height < 1) {
            throw SchemaError("/dataset", "flow_frames, width and height must be >= 1");
        }
    }
    try {
        (void)c.schedule();
    } catch (const ArgumentError& e) {
        throw SchemaError("/schedule", e.what());
    }
    return with_seed(c, c.seed);
}

} // namespace uniflow
