// SPDX-License-Identifier: Apache-2.0
//
// x0-prediction diffusion denoiser: a stack of [SSM block -> cross-attention
// -> feed-forward] layers conditioned on text tokens, the diffusion timestep,
// keyframe weights and phase encoding. Training and the full gradient path
// run on the autodiff tape; sampling is a deterministic x0-parameterized
// update over strided timesteps.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rhythm/analysis.hpp"
#include "rhythm/attention.hpp"
#include "rhythm/autodiff.hpp"
#include "rhythm/mat.hpp"
#include "rhythm/motion.hpp"
#include "rhythm/ssm.hpp"

namespace rhythm {

struct DiffusionConfig {
    int steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    double cfg_mask_prob = 0.1;
    double guidance_scale = 2.5;
    int sample_steps = 10;
    int layers = 6;
    uint64_t seed = 0;
};

void validate_diffusion(const DiffusionConfig& cfg);

struct Schedule {
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;
};

Schedule beta_schedule(const DiffusionConfig& cfg);

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise
Mat q_sample(const Mat& x0, int t, const Mat& noise, const Schedule& sched);

struct ModelDims {
    int motion_dim = 8;
    int d_model = 32;
    int d_inner = 64;
    int n_state = 16;
    int heads = 2;
    int ffn_mult = 2;
    int text_tokens = 4;  // stub text rows; embeddings live in d_model
    SoftmaxAxes softmax_axes = SoftmaxAxes::efficient;
    double lambda_init = 0.8;
};

struct LayerParams {
    SsmBlockParams ssm;
    CrossAttnParams attn;
    Mat W_ff1, b_ff1, W_ff2, b_ff2;
};

struct Model {
    ModelDims dims;
    int layers = 0;
    Mat W_embed, b_embed;  // motion_dim -> d_model
    Mat W_out, b_out;      // d_model -> motion_dim
    Mat null_token;        // (1, d_model), used when text is dropped
    std::vector<LayerParams> layer;

    static Model init(const ModelDims& dims, int layers, uint64_t seed);

    // Enumerates every parameter once, in the fixed order used by the
    // checkpoint blob, the optimizer state and the tape binding.
    template <typename F>
    void visit(F&& f) {
        f("embed.W", W_embed);
        f("embed.b", b_embed);
        f("out.W", W_out);
        f("out.b", b_out);
        f("null_token", null_token);
        for (int i = 0; i < layers; ++i) {
            const std::string lp = "layer" + std::to_string(i);
            layer[i].ssm.visit(lp + ".ssm", f);
            layer[i].attn.visit(lp + ".attn", f);
            f(lp + ".ffn.W1", layer[i].W_ff1);
            f(lp + ".ffn.b1", layer[i].b_ff1);
            f(lp + ".ffn.W2", layer[i].W_ff2);
            f(lp + ".ffn.b2", layer[i].b_ff2);
        }
    }

    size_t param_count();
};

// Everything predict_x0 needs besides the noisy motion itself.
struct ConditioningBundle {
    Mat text;                // (L_t, d_model); empty => conditioning dropped
    Mat timestep_embedding;  // (1, d_model)
    std::vector<double> M;   // length L keyframe weights
    Mat Phi;                 // (L, 2) phase encoding; empty => zero phase
    std::vector<double> phi; // length L radians
};

Mat sinusoidal_timestep_embedding(int t, int dim);

// Neutral conditioning (M = 1, Phi = 0, phi = 0) for a length-L input.
ConditioningBundle neutral_conditioning(int L, int t, int d_model);

// M/Phi/phi estimated by the analysis modules from a clean (or estimated)
// motion matrix.
ConditioningBundle estimate_conditioning(const Mat& frames, int t, int d_model, const AnalysisConfig& cfg);

struct ModelBinding {
    std::vector<std::string> names;
    std::vector<Mat*> params;   // into the bound Model, visit order
    std::vector<ad::Var> vars;  // matching tape leaves
};

// Tape forward; binding is produced by bind_model on the same tape.
ad::Var predict_x0_tape(ad::Tape& tape, Model& model, ModelBinding& binding, const Mat& x_t,
                        const ConditioningBundle& cond);

ModelBinding bind_model(ad::Tape& tape, Model& model);

// Convenience forward on a throwaway tape.
Mat predict_x0(Model& model, const Mat& x_t, const ConditioningBundle& cond);

// x0_uncond + scale * (x0_cond - x0_uncond); the unconditional branch swaps
// the text for the learned null token.
Mat cfg_predict(Model& model, const Mat& x_t, const ConditioningBundle& cond, double scale);

struct SampleOptions {
    int length = 64;
    int text_class = 0;
    uint64_t seed = 0;
    uint64_t text_seed = 1;
    AnalysisConfig analysis;
};

// Deterministic sampler: strided timesteps, per-step keyframe/phase
// re-estimation from the running x0 estimate (first step neutral).
MotionSequence sample(Model& model, const DiffusionConfig& cfg, const SampleOptions& opts);

struct TrainConfig {
    int steps = 5500;
    int batch = 16;
    double lr = 2e-4;
    double weight_decay = 1e-2;
    double clip_norm = 1.0;
    double lr_decay = 0.9;
    int lr_decay_every = 5000;
    // Probability of replacing the keyframe/phase conditioning with the
    // neutral bundle (M = 1, Phi = 0) for a training item. The sampler
    // bootstraps from exactly that bundle, so it must be in-distribution.
    double cond_dropout = 0.5;
    // Probability of swapping in the keyframe/phase conditioning of another
    // dataset item, target unchanged. The sampler re-estimates conditioning
    // from intermediate x0 guesses whose keyframe structure never quite
    // matches a clean sequence; the model has to prefer text + input over a
    // disagreeing phase track.
    double cond_swap = 0.2;
    uint64_t seed = 0;
    AnalysisConfig analysis;
};

struct ToyDatasetConfig {
    int num_sequences = 256;
    int length = 64;
    int motion_dim = 8;
    std::vector<int> class_periods = {16, 8};
    double amp = 1.0;
    double noise_sigma = 0.05;
    uint64_t seed = 7;
    uint64_t text_seed = 1;
    int text_tokens = 4;
};

struct TrainItem {
    MotionSequence motion;
    int class_id = 0;
    Mat text;  // (L_t, d_model)
    // conditioning from the clean sequence, reused every epoch
    std::vector<double> M;
    Mat Phi;
    std::vector<double> phi;
};

std::vector<TrainItem> make_toy_dataset(const ToyDatasetConfig& cfg, int d_model, const AnalysisConfig& analysis);

// Runs AdamW over seeded batches; returns the per-step loss curve. Throws on
// loss divergence. Deterministic for a fixed seed regardless of worker count.
std::vector<double> train(Model& model, const std::vector<TrainItem>& dataset, const DiffusionConfig& dcfg,
                          const TrainConfig& tcfg);

void write_loss_curve(const std::vector<double>& losses, const std::string& path);

// Checkpoints: <prefix>.json manifest + <prefix>.bin little-endian f32 blob,
// both content-hashed. Saving canonicalizes in-memory parameters to f32 so a
// save/load round trip is bit-exact.
void save_checkpoint(Model& model, const DiffusionConfig& cfg, const std::string& prefix);
Model load_checkpoint(const std::string& prefix, DiffusionConfig* cfg_out = nullptr);

// Worker cap: RHYTHM_SSM_THREADS, else hardware concurrency.
int worker_count();

}  // namespace rhythm
