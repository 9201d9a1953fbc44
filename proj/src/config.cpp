// SPDX-License-Identifier: Apache-2.0

#include "rhythm/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "rhythm/errors.hpp"
#include "rhythm/rng.hpp"

namespace rhythm {

using nlohmann::json;

namespace {

void expect_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
    if (!j.is_object()) throw FormatError("config: " + where + " must be an object");
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key)) throw FormatError("config: unknown key '" + where + key + "'");
}

template <typename T>
void get_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

CliConfig default_config() { return CliConfig{}; }

void validate_config(const CliConfig& cfg) {
    const auto& dpc = cfg.analysis.dpc;
    if (!(dpc.cutoff_fraction > 0.0 && dpc.cutoff_fraction < 1.0))
        throw ArgumentError("config: saliency.fraction must be in (0, 1)");
    if (cfg.analysis.num_segments < 0) throw ArgumentError("config: saliency.segments must be >= 0");

    const auto& per = cfg.analysis.periodicity;
    if (!(per.theta_ent > 0.0 && per.theta_ent <= 1.0))
        throw ArgumentError("config: periodicity.theta_ent must be in (0, 1]");
    if (per.theta_peak < 0.0 || per.theta_prom < 0.0)
        throw ArgumentError("config: periodicity thresholds must be non-negative");

    const auto& m = cfg.model;
    if (m.motion_dim < 1 || m.d_model < 2 || m.d_inner < 1 || m.n_state < 1 || m.text_tokens < 1 || m.ffn_mult < 1)
        throw ArgumentError("config: model dims must be positive");
    if (m.d_model % 2 != 0) throw ArgumentError("config: model.d_model must be even");
    if (m.heads < 1 || m.d_model % m.heads != 0) throw ArgumentError("config: model.heads must divide d_model");
    if (!(m.lambda_init >= 0.0 && m.lambda_init <= 1.0))
        throw ArgumentError("config: model.lambda_init must be in [0, 1]");

    validate_diffusion(cfg.diffusion);

    if (cfg.train.steps < 1 || cfg.train.batch < 1) throw ArgumentError("config: train.steps and batch must be >= 1");
    if (!(cfg.train.lr > 0.0)) throw ArgumentError("config: train.lr must be positive");
    if (cfg.train.lr_decay_every < 1) throw ArgumentError("config: train.lr_decay_every must be >= 1");
    if (cfg.train.cond_dropout < 0.0 || cfg.train.cond_dropout > 1.0)
        throw ArgumentError("config: train.cond_dropout must be in [0, 1]");
    if (cfg.train.cond_swap < 0.0 || cfg.train.cond_swap > 1.0)
        throw ArgumentError("config: train.cond_swap must be in [0, 1]");

    const auto& d = cfg.dataset;
    if (d.num_sequences < 1 || d.length < 2 || d.motion_dim < 1)
        throw ArgumentError("config: dataset sizes must be positive");
    if (d.class_periods.empty()) throw ArgumentError("config: dataset.class_periods must be non-empty");
    for (int p : d.class_periods) {
        if (p < 2) throw ArgumentError("config: dataset periods must be >= 2");
        if (d.length < 2 * p) throw ArgumentError("config: dataset.length must be >= 2 * period");
    }
    if (d.noise_sigma < 0.0) throw ArgumentError("config: dataset.noise_sigma must be >= 0");
    if (d.motion_dim != cfg.model.motion_dim)
        throw ArgumentError("config: dataset.motion_dim must match model.motion_dim");
}

CliConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config " + path);
    json j;
    try {
        is >> j;
    } catch (const std::exception& e) {
        throw FormatError(std::string("config: ") + e.what());
    }

    CliConfig cfg;
    expect_keys(j, "", {"seed", "saliency", "periodicity", "model", "diffusion", "train", "dataset"});
    get_if(j, "seed", cfg.seed);

    if (j.contains("saliency")) {
        const json& s = j.at("saliency");
        expect_keys(s, "saliency.", {"fraction", "weight_mode", "segments"});
        get_if(s, "fraction", cfg.analysis.dpc.cutoff_fraction);
        get_if(s, "segments", cfg.analysis.num_segments);
        if (s.contains("weight_mode")) {
            const std::string mode = s.at("weight_mode");
            if (mode == "eq3")
                cfg.analysis.dpc.weight_mode = DpcConfig::WeightMode::eq3;
            else if (mode == "one_plus_gamma")
                cfg.analysis.dpc.weight_mode = DpcConfig::WeightMode::one_plus_gamma;
            else
                throw FormatError("config: saliency.weight_mode must be eq3 or one_plus_gamma");
        }
    }

    if (j.contains("periodicity")) {
        const json& p = j.at("periodicity");
        expect_keys(p, "periodicity.", {"theta_peak", "theta_prom", "theta_ent"});
        get_if(p, "theta_peak", cfg.analysis.periodicity.theta_peak);
        get_if(p, "theta_prom", cfg.analysis.periodicity.theta_prom);
        get_if(p, "theta_ent", cfg.analysis.periodicity.theta_ent);
    }

    if (j.contains("model")) {
        const json& m = j.at("model");
        expect_keys(m, "model.",
                    {"motion_dim", "d_model", "d_inner", "n_state", "heads", "ffn_mult", "text_tokens",
                     "softmax_axes", "lambda_init"});
        get_if(m, "motion_dim", cfg.model.motion_dim);
        get_if(m, "d_model", cfg.model.d_model);
        get_if(m, "d_inner", cfg.model.d_inner);
        get_if(m, "n_state", cfg.model.n_state);
        get_if(m, "heads", cfg.model.heads);
        get_if(m, "ffn_mult", cfg.model.ffn_mult);
        get_if(m, "text_tokens", cfg.model.text_tokens);
        get_if(m, "lambda_init", cfg.model.lambda_init);
        if (m.contains("softmax_axes")) {
            const std::string axes = m.at("softmax_axes");
            if (axes == "efficient")
                cfg.model.softmax_axes = SoftmaxAxes::efficient;
            else if (axes == "literal")
                cfg.model.softmax_axes = SoftmaxAxes::literal;
            else
                throw FormatError("config: model.softmax_axes must be efficient or literal");
        }
    }

    if (j.contains("diffusion")) {
        const json& d = j.at("diffusion");
        expect_keys(d, "diffusion.",
                    {"steps", "beta_start", "beta_end", "cfg_mask_prob", "guidance_scale", "sample_steps", "layers"});
        get_if(d, "steps", cfg.diffusion.steps);
        get_if(d, "beta_start", cfg.diffusion.beta_start);
        get_if(d, "beta_end", cfg.diffusion.beta_end);
        get_if(d, "cfg_mask_prob", cfg.diffusion.cfg_mask_prob);
        get_if(d, "guidance_scale", cfg.diffusion.guidance_scale);
        get_if(d, "sample_steps", cfg.diffusion.sample_steps);
        get_if(d, "layers", cfg.diffusion.layers);
    }

    if (j.contains("train")) {
        const json& t = j.at("train");
        expect_keys(t, "train.",
                    {"steps", "batch", "lr", "weight_decay", "clip_norm", "lr_decay", "lr_decay_every",
                     "cond_dropout", "cond_swap"});
        get_if(t, "steps", cfg.train.steps);
        get_if(t, "batch", cfg.train.batch);
        get_if(t, "lr", cfg.train.lr);
        get_if(t, "weight_decay", cfg.train.weight_decay);
        get_if(t, "clip_norm", cfg.train.clip_norm);
        get_if(t, "lr_decay", cfg.train.lr_decay);
        get_if(t, "lr_decay_every", cfg.train.lr_decay_every);
        get_if(t, "cond_dropout", cfg.train.cond_dropout);
        get_if(t, "cond_swap", cfg.train.cond_swap);
    }

    if (j.contains("dataset")) {
        const json& d = j.at("dataset");
        expect_keys(d, "dataset.",
                    {"num_sequences", "length", "motion_dim", "class_periods", "amp", "noise_sigma", "text_seed"});
        get_if(d, "num_sequences", cfg.dataset.num_sequences);
        get_if(d, "length", cfg.dataset.length);
        get_if(d, "motion_dim", cfg.dataset.motion_dim);
        get_if(d, "amp", cfg.dataset.amp);
        get_if(d, "noise_sigma", cfg.dataset.noise_sigma);
        get_if(d, "text_seed", cfg.dataset.text_seed);
        if (d.contains("class_periods")) cfg.dataset.class_periods = d.at("class_periods").get<std::vector<int>>();
    }

    cfg.diffusion.seed = cfg.seed;
    cfg.train.seed = cfg.seed;
    cfg.train.analysis = cfg.analysis;
    cfg.dataset.seed = hash_mix(cfg.seed, 0x64617461ULL);
    cfg.dataset.text_tokens = cfg.model.text_tokens;

    validate_config(cfg);
    return cfg;
}

}  // namespace rhythm
