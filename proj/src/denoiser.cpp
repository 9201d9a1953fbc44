// SPDX-License-Identifier: Apache-2.0

#include "rhythm/denoiser.hpp"

#include <atomic>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <thread>
#include <unordered_map>

#include <json.hpp>

#include "rhythm/errors.hpp"
#include "rhythm/rng.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint blob layout assumes a little-endian host");

namespace rhythm {

using ordered_json = nlohmann::ordered_json;

void validate_diffusion(const DiffusionConfig& cfg) {
    if (cfg.steps < 1) throw ArgumentError("diffusion: steps must be >= 1");
    if (!(cfg.beta_start > 0.0 && cfg.beta_start < cfg.beta_end && cfg.beta_end < 1.0))
        throw ArgumentError("diffusion: need 0 < beta_start < beta_end < 1");
    if (cfg.cfg_mask_prob < 0.0 || cfg.cfg_mask_prob > 1.0)
        throw ArgumentError("diffusion: cfg_mask_prob must be in [0, 1]");
    if (cfg.sample_steps < 1 || cfg.sample_steps > cfg.steps)
        throw ArgumentError("diffusion: sample_steps must be in [1, steps]");
    if (cfg.layers < 1) throw ArgumentError("diffusion: layers must be >= 1");
    if (!(cfg.guidance_scale >= 0.0)) throw ArgumentError("diffusion: guidance_scale must be >= 0");
}

Schedule beta_schedule(const DiffusionConfig& cfg) {
    validate_diffusion(cfg);
    Schedule s;
    s.betas.resize(cfg.steps);
    s.alphas.resize(cfg.steps);
    s.alpha_bars.resize(cfg.steps);
    const int denom = std::max(cfg.steps - 1, 1);
    double abar = 1.0;
    for (int t = 0; t < cfg.steps; ++t) {
        s.betas[t] = cfg.beta_start + (cfg.beta_end - cfg.beta_start) * static_cast<double>(t) / denom;
        s.alphas[t] = 1.0 - s.betas[t];
        abar *= s.alphas[t];
        s.alpha_bars[t] = abar;
    }
    return s;
}

Mat q_sample(const Mat& x0, int t, const Mat& noise, const Schedule& sched) {
    if (t < 0 || t >= static_cast<int>(sched.alpha_bars.size())) throw ArgumentError("q_sample: t out of range");
    if (!x0.same_shape(noise)) throw ArgumentError("q_sample: noise shape mismatch");
    const double abar = sched.alpha_bars[t];
    const double c0 = std::sqrt(abar);
    const double cn = std::sqrt(1.0 - abar);
    Mat out(x0.rows, x0.cols);
    for (size_t i = 0; i < out.a.size(); ++i) out.a[i] = c0 * x0.a[i] + cn * noise.a[i];
    return out;
}

Mat sinusoidal_timestep_embedding(int t, int dim) {
    if (dim % 2 != 0) throw ArgumentError("timestep embedding: dim must be even");
    Mat emb(1, dim);
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
        emb(0, 2 * i) = std::sin(t * freq);
        emb(0, 2 * i + 1) = std::cos(t * freq);
    }
    return emb;
}

ConditioningBundle neutral_conditioning(int L, int t, int d_model) {
    ConditioningBundle c;
    c.timestep_embedding = sinusoidal_timestep_embedding(t, d_model);
    c.M.assign(L, 1.0);
    c.phi.assign(L, 0.0);
    c.Phi = Mat();  // zero phase input
    return c;
}

ConditioningBundle estimate_conditioning(const Mat& frames, int t, int d_model, const AnalysisConfig& cfg) {
    MotionSequence seq;
    seq.frames = frames;
    seq.fps = 20.0;
    seq.name = "estimate";
    const MotionAnalysis analysis = analyze_motion(seq, cfg);

    ConditioningBundle c;
    c.timestep_embedding = sinusoidal_timestep_embedding(t, d_model);
    c.M = analysis.keyframes.weights;
    c.Phi = analysis.phase.phase_encoding;
    c.phi = analysis.phase.phi;
    return c;
}

Model Model::init(const ModelDims& dims, int layers, uint64_t seed) {
    if (dims.d_model % 2 != 0) throw ArgumentError("model: d_model must be even");
    if (dims.heads < 1 || dims.d_model % dims.heads != 0) throw ArgumentError("model: heads must divide d_model");
    if (layers < 1) throw ArgumentError("model: need at least one layer");

    Rng rng(hash_mix(seed, 0x6d6f64656cULL));
    Model m;
    m.dims = dims;
    m.layers = layers;
    m.W_embed = rng.normal_mat(dims.motion_dim, dims.d_model, 1.0 / std::sqrt(static_cast<double>(dims.motion_dim)));
    m.b_embed = Mat(1, dims.d_model);
    m.W_out = rng.normal_mat(dims.d_model, dims.motion_dim, 1.0 / std::sqrt(static_cast<double>(dims.d_model)));
    m.b_out = Mat(1, dims.motion_dim);
    m.null_token = rng.normal_mat(1, dims.d_model, 1.0);
    {
        double n = 0.0;
        for (double x : m.null_token.a) n += x * x;
        const double inv = 1.0 / std::sqrt(n > 0.0 ? n : 1.0);
        for (auto& x : m.null_token.a) x *= inv;
    }

    const int d_ff = dims.ffn_mult * dims.d_model;
    for (int i = 0; i < layers; ++i) {
        LayerParams lp;
        lp.ssm = SsmBlockParams::init(dims.d_model, dims.d_inner, dims.n_state, rng);
        lp.attn = CrossAttnParams::init(dims.d_model, dims.heads, rng);
        lp.attn.lambda_init = dims.lambda_init;
        lp.attn.softmax_axes = dims.softmax_axes;
        lp.W_ff1 = rng.normal_mat(dims.d_model, d_ff, 1.0 / std::sqrt(static_cast<double>(dims.d_model)));
        lp.b_ff1 = Mat(1, d_ff);
        lp.W_ff2 = rng.normal_mat(d_ff, dims.d_model, 1.0 / std::sqrt(static_cast<double>(d_ff)));
        lp.b_ff2 = Mat(1, dims.d_model);
        m.layer.push_back(std::move(lp));
    }
    return m;
}

size_t Model::param_count() {
    size_t n = 0;
    visit([&](const std::string&, Mat& p) { n += p.size(); });
    return n;
}

ModelBinding bind_model(ad::Tape& tape, Model& model) {
    ModelBinding b;
    model.visit([&](const std::string& name, Mat& p) {
        b.names.push_back(name);
        b.params.push_back(&p);
        b.vars.push_back(tape.leaf(p));
    });
    return b;
}

namespace {

struct VarLookup {
    std::unordered_map<std::string, ad::Var> map;
    explicit VarLookup(const ModelBinding& b) {
        for (size_t i = 0; i < b.names.size(); ++i) map.emplace(b.names[i], b.vars[i]);
    }
    ad::Var at(const std::string& name) const {
        auto it = map.find(name);
        if (it == map.end()) throw std::logic_error("model binding is missing " + name);
        return it->second;
    }
};

SsmBlockVars ssm_vars_for(const VarLookup& lk, const std::string& prefix) {
    SsmBlockVars v;
    v.W_phi = lk.at(prefix + ".W_phi");
    v.W_in = lk.at(prefix + ".W_in");
    v.b_in = lk.at(prefix + ".b_in");
    v.W_out = lk.at(prefix + ".W_out");
    v.b_out = lk.at(prefix + ".b_out");
    auto dir = [&](const std::string& d) {
        SsmBlockVars::Dir dv;
        dv.A_log = lk.at(prefix + "." + d + ".A_log");
        dv.W_B = lk.at(prefix + "." + d + ".W_B");
        dv.W_C = lk.at(prefix + "." + d + ".W_C");
        dv.W_delta = lk.at(prefix + "." + d + ".W_delta");
        dv.b_delta = lk.at(prefix + "." + d + ".b_delta");
        return dv;
    };
    v.fwd = dir("fwd");
    v.bwd = dir("bwd");
    return v;
}

CrossAttnVars attn_vars_for(const VarLookup& lk, const std::string& prefix, int heads) {
    CrossAttnVars v;
    for (int h = 0; h < heads; ++h) {
        const std::string hp = prefix + ".h" + std::to_string(h);
        v.W_Q.push_back(lk.at(hp + ".W_Q"));
        v.W_K.push_back(lk.at(hp + ".W_K"));
        v.W_V.push_back(lk.at(hp + ".W_V"));
    }
    v.W_O = lk.at(prefix + ".W_O");
    v.lam_q1 = lk.at(prefix + ".lam_q1");
    v.lam_k1 = lk.at(prefix + ".lam_k1");
    v.lam_q2 = lk.at(prefix + ".lam_q2");
    v.lam_k2 = lk.at(prefix + ".lam_k2");
    v.alpha_imp = lk.at(prefix + ".alpha_imp");
    v.beta = lk.at(prefix + ".beta");
    return v;
}

uint64_t fnv1a64(const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = 0xcbf29ce484222325ULL;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

ad::Var predict_x0_tape(ad::Tape& tape, Model& model, ModelBinding& binding, const Mat& x_t,
                        const ConditioningBundle& cond) {
    const int L = x_t.rows;
    if (x_t.cols != model.dims.motion_dim) throw ArgumentError("predict_x0: motion dim mismatch");
    if (!all_finite(x_t)) throw ValidationError("predict_x0: NaN/Inf in input");
    if (static_cast<int>(cond.M.size()) != L) throw ArgumentError("predict_x0: keyframe weights length mismatch");
    if (cond.Phi.rows > 0 && cond.Phi.rows != L) throw ArgumentError("predict_x0: phase track length mismatch");
    if (static_cast<int>(cond.phi.size()) != L) throw ArgumentError("predict_x0: phi length mismatch");
    if (cond.timestep_embedding.cols != model.dims.d_model)
        throw ArgumentError("predict_x0: timestep embedding dim mismatch");

    const VarLookup lk(binding);
    Mat m_col(L, 1);
    for (int i = 0; i < L; ++i) m_col(i, 0) = cond.M[i];
    Mat phi_col(L, 1);
    for (int i = 0; i < L; ++i) phi_col(i, 0) = cond.phi[i];

    ad::Var M_var = tape.leaf(m_col);
    ad::Var text = cond.text.rows > 0 ? tape.leaf(cond.text) : lk.at("null_token");

    // input embedding + broadcast timestep embedding
    Mat t_rows(L, model.dims.d_model);
    for (int i = 0; i < L; ++i)
        for (int j = 0; j < model.dims.d_model; ++j) t_rows(i, j) = cond.timestep_embedding(0, j);
    ad::Var H = tape.add_rowvec(tape.const_matmul(x_t, lk.at("embed.W")), lk.at("embed.b"));
    H = tape.add_constmat(H, t_rows);

    for (int i = 0; i < model.layers; ++i) {
        const std::string lp = "layer" + std::to_string(i);
        const SsmBlockVars sv = ssm_vars_for(lk, lp + ".ssm");
        const CrossAttnVars av = attn_vars_for(lk, lp + ".attn", model.dims.heads);
        const CrossAttnParams& ap = model.layer[i].attn;

        H = ssm_block(tape, H, M_var, cond.Phi, sv);

        ad::Var attn_in = tape.rmsnorm_rows(H, ap.rmsnorm_eps);
        H = tape.add(H, multi_head_cross_attn(tape, attn_in, text, m_col, phi_col, av, ap));

        ad::Var ffn_in = tape.rmsnorm_rows(H, ap.rmsnorm_eps);
        ad::Var hidden = tape.silu(tape.add_rowvec(tape.matmul(ffn_in, lk.at(lp + ".ffn.W1")), lk.at(lp + ".ffn.b1")));
        ad::Var ffn_out = tape.add_rowvec(tape.matmul(hidden, lk.at(lp + ".ffn.W2")), lk.at(lp + ".ffn.b2"));
        H = tape.add(H, ffn_out);
    }

    return tape.add_rowvec(tape.matmul(H, lk.at("out.W")), lk.at("out.b"));
}

Mat predict_x0(Model& model, const Mat& x_t, const ConditioningBundle& cond) {
    ad::Tape tape;
    ModelBinding binding = bind_model(tape, model);
    return tape.value(predict_x0_tape(tape, model, binding, x_t, cond));
}

Mat cfg_predict(Model& model, const Mat& x_t, const ConditioningBundle& cond, double scale) {
    if (cond.text.rows > 0 && scale == 1.0) return predict_x0(model, x_t, cond);
    ConditioningBundle uncond = cond;
    uncond.text = Mat();
    Mat x0_u = predict_x0(model, x_t, uncond);
    if (cond.text.rows == 0 || scale == 0.0) return x0_u;
    Mat x0_c = predict_x0(model, x_t, cond);
    Mat out(x0_u.rows, x0_u.cols);
    for (size_t i = 0; i < out.a.size(); ++i) out.a[i] = x0_u.a[i] + scale * (x0_c.a[i] - x0_u.a[i]);
    return out;
}

MotionSequence sample(Model& model, const DiffusionConfig& cfg, const SampleOptions& opts) {
    validate_diffusion(cfg);
    bool params_ok = true;
    model.visit([&](const std::string&, Mat& p) { params_ok = params_ok && all_finite(p); });
    if (!params_ok) throw ValidationError("sample: model parameters contain NaN/Inf");

    const Schedule sched = beta_schedule(cfg);
    const int L = opts.length;
    const int D = model.dims.motion_dim;
    const int S = cfg.sample_steps;

    // descending strided timesteps, e.g. steps=1000, S=10 -> 999, 899, ..., 99
    std::vector<int> ts(S);
    for (int j = 0; j < S; ++j) ts[j] = static_cast<int>((static_cast<int64_t>(S - j) * cfg.steps) / S) - 1;

    Rng rng(hash_mix(opts.seed, 0x73616d706c65ULL));
    Mat x = rng.normal_mat(L, D);
    const Mat text = stub_text_embedding(opts.text_class, model.dims.text_tokens, model.dims.d_model,
                                         opts.text_seed)
                         .tokens;

    Mat x0_hat;
    ConditioningBundle cond = neutral_conditioning(L, ts[0], model.dims.d_model);
    for (int j = 0; j < S; ++j) {
        const int t = ts[j];
        cond.timestep_embedding = sinusoidal_timestep_embedding(t, model.dims.d_model);
        cond.text = text;
        x0_hat = cfg_predict(model, x, cond, cfg.guidance_scale);

        if (j + 1 < S) {
            const int t_next = ts[j + 1];
            const double abar_t = sched.alpha_bars[t];
            const double abar_n = sched.alpha_bars[t_next];
            const double c_eps = 1.0 / std::sqrt(1.0 - abar_t);
            for (size_t i = 0; i < x.a.size(); ++i) {
                const double eps_hat = (x.a[i] - std::sqrt(abar_t) * x0_hat.a[i]) * c_eps;
                x.a[i] = std::sqrt(abar_n) * x0_hat.a[i] + std::sqrt(1.0 - abar_n) * eps_hat;
            }
            // conditioning for the next step comes from the running estimate
            cond = estimate_conditioning(x0_hat, t_next, model.dims.d_model, opts.analysis);
        }
    }

    MotionSequence out;
    out.frames = std::move(x0_hat);
    out.fps = 20.0;
    out.name = "sample_class" + std::to_string(opts.text_class) + "_seed" + std::to_string(opts.seed);
    return out;
}

std::vector<TrainItem> make_toy_dataset(const ToyDatasetConfig& cfg, int d_model, const AnalysisConfig& analysis) {
    if (cfg.class_periods.empty()) throw ArgumentError("toy dataset: need at least one class period");
    std::vector<TrainItem> items;
    items.reserve(cfg.num_sequences);
    const int classes = static_cast<int>(cfg.class_periods.size());
    for (int i = 0; i < cfg.num_sequences; ++i) {
        TrainItem item;
        item.class_id = i % classes;
        item.motion = synth_periodic_motion(cfg.length, cfg.motion_dim, cfg.class_periods[item.class_id], cfg.amp,
                                            cfg.noise_sigma, hash_mix(cfg.seed, static_cast<uint64_t>(i)));
        item.text = stub_text_embedding(item.class_id, cfg.text_tokens, d_model, cfg.text_seed).tokens;

        const MotionAnalysis ma = analyze_motion(item.motion, analysis);
        item.M = ma.keyframes.weights;
        item.Phi = ma.phase.phase_encoding;
        item.phi = ma.phase.phi;
        items.push_back(std::move(item));
    }
    return items;
}

int worker_count() {
    if (const char* env = std::getenv("RHYTHM_SSM_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

std::vector<double> train(Model& model, const std::vector<TrainItem>& dataset, const DiffusionConfig& dcfg,
                          const TrainConfig& tcfg) {
    if (dataset.empty()) throw ArgumentError("train: dataset is empty");
    validate_diffusion(dcfg);
    for (const auto& item : dataset)
        if (item.motion.length() != dataset[0].motion.length() || item.motion.dim() != model.dims.motion_dim)
            throw ArgumentError("train: dataset items must share L and D");

    const Schedule sched = beta_schedule(dcfg);
    const int L = dataset[0].motion.length();
    const int D = model.dims.motion_dim;

    std::vector<size_t> sizes;
    model.visit([&](const std::string&, Mat& p) { sizes.push_back(p.size()); });

    std::vector<Mat> adam_m, adam_v;
    model.visit([&](const std::string&, Mat& p) {
        adam_m.emplace_back(p.rows, p.cols);
        adam_v.emplace_back(p.rows, p.cols);
    });

    Rng rng(hash_mix(tcfg.seed, 0x747261696eULL));
    std::vector<double> losses;
    losses.reserve(tcfg.steps);

    struct WorkUnit {
        const TrainItem* item;
        const TrainItem* cond_source;  // == item unless conditioning is swapped
        int t;
        bool drop_text;
        bool drop_cond;
        Mat x_t;
    };

    const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

    for (int step = 0; step < tcfg.steps; ++step) {
        // all randomness drawn up front, in a fixed order
        std::vector<WorkUnit> units(tcfg.batch);
        for (int b = 0; b < tcfg.batch; ++b) {
            WorkUnit& u = units[b];
            u.item = &dataset[rng.uniform_int(static_cast<int>(dataset.size()))];
            u.cond_source = u.item;
            u.t = rng.uniform_int(dcfg.steps);
            u.drop_text = rng.uniform() < dcfg.cfg_mask_prob;
            u.drop_cond = rng.uniform() < tcfg.cond_dropout;
            if (!u.drop_cond && rng.uniform() < tcfg.cond_swap)
                u.cond_source = &dataset[rng.uniform_int(static_cast<int>(dataset.size()))];
            const Mat noise = rng.normal_mat(L, D);
            u.x_t = q_sample(u.item->motion.frames, u.t, noise, sched);
        }

        std::vector<std::vector<Mat>> item_grads(tcfg.batch);
        std::vector<double> item_loss(tcfg.batch, 0.0);
        std::vector<std::exception_ptr> item_error(tcfg.batch);

        auto run_item = [&](int b) {
            const WorkUnit& u = units[b];
            ad::Tape tape;
            ModelBinding binding = bind_model(tape, model);

            ConditioningBundle cond;
            if (u.drop_cond) {
                cond = neutral_conditioning(L, u.t, model.dims.d_model);
            } else {
                cond.timestep_embedding = sinusoidal_timestep_embedding(u.t, model.dims.d_model);
                cond.M = u.cond_source->M;
                cond.Phi = u.cond_source->Phi;
                cond.phi = u.cond_source->phi;
            }
            if (!u.drop_text) cond.text = u.item->text;

            ad::Var pred = predict_x0_tape(tape, model, binding, u.x_t, cond);
            ad::Var loss = tape.mse(pred, u.item->motion.frames);
            item_loss[b] = tape.value(loss).a[0];
            tape.backward(loss, Mat::full(1, 1, 1.0));

            item_grads[b].reserve(binding.vars.size());
            for (ad::Var v : binding.vars) item_grads[b].push_back(tape.grad_or_zero(v));
        };

        auto guarded_item = [&](int b) {
            try {
                run_item(b);
            } catch (...) {
                item_error[b] = std::current_exception();
            }
        };

        const int workers = std::min(worker_count(), tcfg.batch);
        if (workers <= 1) {
            for (int b = 0; b < tcfg.batch; ++b) guarded_item(b);
        } else {
            std::atomic<int> next{0};
            std::vector<std::thread> pool;
            pool.reserve(workers);
            for (int w = 0; w < workers; ++w)
                pool.emplace_back([&] {
                    for (int b = next.fetch_add(1); b < tcfg.batch; b = next.fetch_add(1)) guarded_item(b);
                });
            for (auto& th : pool) th.join();
        }
        for (int b = 0; b < tcfg.batch; ++b)
            if (item_error[b]) std::rethrow_exception(item_error[b]);

        // reduction in item order keeps training independent of scheduling
        std::vector<Mat> grads;
        grads.reserve(sizes.size());
        for (size_t pi = 0; pi < sizes.size(); ++pi) {
            Mat g = item_grads[0][pi];
            for (int b = 1; b < tcfg.batch; ++b)
                for (size_t i = 0; i < g.a.size(); ++i) g.a[i] += item_grads[b][pi].a[i];
            for (auto& x : g.a) x /= tcfg.batch;
            grads.push_back(std::move(g));
        }

        double loss_mean = 0.0;
        for (int b = 0; b < tcfg.batch; ++b) loss_mean += item_loss[b];
        loss_mean /= tcfg.batch;
        if (!std::isfinite(loss_mean))
            throw ValidationError("train: loss diverged (NaN/Inf) at step " + std::to_string(step));
        losses.push_back(loss_mean);

        double norm_sq = 0.0;
        for (const Mat& g : grads)
            for (double x : g.a) norm_sq += x * x;
        const double norm = std::sqrt(norm_sq);
        const double clip_scale = (tcfg.clip_norm > 0.0 && norm > tcfg.clip_norm) ? tcfg.clip_norm / norm : 1.0;

        const double lr = tcfg.lr * std::pow(tcfg.lr_decay, step / tcfg.lr_decay_every);
        const double bc1 = 1.0 - std::pow(beta1, step + 1);
        const double bc2 = 1.0 - std::pow(beta2, step + 1);

        size_t pi = 0;
        model.visit([&](const std::string&, Mat& p) {
            Mat& g = grads[pi];
            Mat& m = adam_m[pi];
            Mat& v = adam_v[pi];
            for (size_t i = 0; i < p.a.size(); ++i) {
                const double gi = g.a[i] * clip_scale;
                m.a[i] = beta1 * m.a[i] + (1.0 - beta1) * gi;
                v.a[i] = beta2 * v.a[i] + (1.0 - beta2) * gi * gi;
                const double mhat = m.a[i] / bc1;
                const double vhat = v.a[i] / bc2;
                p.a[i] -= lr * (mhat / (std::sqrt(vhat) + adam_eps) + tcfg.weight_decay * p.a[i]);
            }
            ++pi;
        });
    }
    return losses;
}

void write_loss_curve(const std::vector<double>& losses, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path);
    os << "step,loss\n";
    char buf[64];
    for (size_t i = 0; i < losses.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, losses[i]);
        os << buf;
    }
}

void save_checkpoint(Model& model, const DiffusionConfig& cfg, const std::string& prefix) {
    // canonicalize to storage precision so save -> load is bit-exact
    model.visit([](const std::string&, Mat& p) {
        for (auto& x : p.a) x = static_cast<double>(static_cast<float>(x));
    });

    std::vector<float> blob;
    ordered_json params = ordered_json::array();
    size_t offset = 0;
    model.visit([&](const std::string& name, Mat& p) {
        params.push_back({{"name", name}, {"offset", offset}, {"rows", p.rows}, {"cols", p.cols}});
        for (double x : p.a) blob.push_back(static_cast<float>(x));
        offset += p.size();
    });

    const uint64_t blob_hash = fnv1a64(blob.data(), blob.size() * sizeof(float));

    ordered_json manifest;
    manifest["format"] = "rhythm-checkpoint-v1";
    manifest["model"] = {{"motion_dim", model.dims.motion_dim}, {"d_model", model.dims.d_model},
                         {"d_inner", model.dims.d_inner},       {"n_state", model.dims.n_state},
                         {"heads", model.dims.heads},           {"ffn_mult", model.dims.ffn_mult},
                         {"text_tokens", model.dims.text_tokens},
                         {"softmax_axes", model.dims.softmax_axes == SoftmaxAxes::efficient ? "efficient"
                                                                                            : "literal"},
                         {"lambda_init", model.dims.lambda_init},
                         {"layers", model.layers}};
    manifest["diffusion"] = {{"steps", cfg.steps},
                             {"beta_start", cfg.beta_start},
                             {"beta_end", cfg.beta_end},
                             {"cfg_mask_prob", cfg.cfg_mask_prob},
                             {"guidance_scale", cfg.guidance_scale},
                             {"sample_steps", cfg.sample_steps},
                             {"layers", cfg.layers},
                             {"seed", cfg.seed}};
    manifest["params"] = std::move(params);
    manifest["blob_floats"] = blob.size();
    manifest["blob_hash"] = hex64(blob_hash);
    const std::string canonical = manifest.dump();
    manifest["manifest_hash"] = hex64(fnv1a64(canonical.data(), canonical.size()));

    std::ofstream mj(prefix + ".json");
    if (!mj) throw IoError("cannot write " + prefix + ".json");
    mj << manifest.dump(2) << "\n";

    std::ofstream mb(prefix + ".bin", std::ios::binary);
    if (!mb) throw IoError("cannot write " + prefix + ".bin");
    mb.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size() * sizeof(float)));
    if (!mj || !mb) throw IoError("checkpoint write failed for " + prefix);
}

Model load_checkpoint(const std::string& prefix, DiffusionConfig* cfg_out) {
    std::ifstream mj(prefix + ".json");
    if (!mj) throw IoError("cannot open " + prefix + ".json");
    ordered_json manifest;
    try {
        mj >> manifest;
    } catch (const std::exception& e) {
        throw FormatError(prefix + ".json: " + e.what());
    }
    if (manifest.value("format", "") != "rhythm-checkpoint-v1")
        throw FormatError(prefix + ".json: unknown checkpoint format");

    const std::string stored_hash = manifest.at("manifest_hash");
    manifest.erase("manifest_hash");
    if (hex64(fnv1a64(manifest.dump().data(), manifest.dump().size())) != stored_hash)
        throw FormatError(prefix + ".json: manifest hash mismatch");

    ModelDims dims;
    const auto& jm = manifest.at("model");
    dims.motion_dim = jm.at("motion_dim");
    dims.d_model = jm.at("d_model");
    dims.d_inner = jm.at("d_inner");
    dims.n_state = jm.at("n_state");
    dims.heads = jm.at("heads");
    dims.ffn_mult = jm.at("ffn_mult");
    dims.text_tokens = jm.at("text_tokens");
    dims.softmax_axes = jm.at("softmax_axes") == "efficient" ? SoftmaxAxes::efficient : SoftmaxAxes::literal;
    dims.lambda_init = jm.at("lambda_init");
    const int layers = jm.at("layers");

    if (cfg_out) {
        const auto& jd = manifest.at("diffusion");
        cfg_out->steps = jd.at("steps");
        cfg_out->beta_start = jd.at("beta_start");
        cfg_out->beta_end = jd.at("beta_end");
        cfg_out->cfg_mask_prob = jd.at("cfg_mask_prob");
        cfg_out->guidance_scale = jd.at("guidance_scale");
        cfg_out->sample_steps = jd.at("sample_steps");
        cfg_out->layers = jd.at("layers");
        cfg_out->seed = jd.at("seed");
    }

    std::ifstream mb(prefix + ".bin", std::ios::binary);
    if (!mb) throw IoError("cannot open " + prefix + ".bin");
    const size_t blob_floats = manifest.at("blob_floats");
    std::vector<float> blob(blob_floats);
    mb.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(blob_floats * sizeof(float)));
    if (!mb) throw FormatError(prefix + ".bin: truncated blob");
    if (hex64(fnv1a64(blob.data(), blob.size() * sizeof(float))) != manifest.at("blob_hash"))
        throw FormatError(prefix + ".bin: blob hash mismatch");

    Model model = Model::init(dims, layers, 0);
    const auto& jp = manifest.at("params");
    size_t idx = 0;
    size_t declared = 0;
    model.visit([&](const std::string& name, Mat& p) {
        if (idx >= jp.size()) throw FormatError(prefix + ".json: manifest is missing parameters");
        const auto& entry = jp.at(idx);
        if (entry.at("name") != name || entry.at("rows") != p.rows || entry.at("cols") != p.cols)
            throw FormatError(prefix + ".json: manifest does not match model layout at " + name);
        const size_t offset = entry.at("offset");
        if (offset != declared) throw FormatError(prefix + ".json: non-contiguous parameter offsets");
        if (offset + p.size() > blob.size()) throw FormatError(prefix + ".json: blob too short for " + name);
        for (size_t i = 0; i < p.size(); ++i) p.a[i] = static_cast<double>(blob[offset + i]);
        declared += p.size();
        ++idx;
    });
    if (idx != jp.size()) throw FormatError(prefix + ".json: manifest declares extra parameters");
    if (declared != blob.size()) throw FormatError(prefix + ".json: blob length does not match declared shapes");
    return model;
}

}  // namespace rhythm
