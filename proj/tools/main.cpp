// SPDX-License-Identifier: Apache-2.0
//
// Single-binary CLI over the analysis, training, sampling and verification
// surfaces. Exit codes: 0 ok, 1 check failed, 2 bad input. Machine-readable
// output goes to stdout (or --out); human summaries go to stderr.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rhythm/analysis.hpp"
#include "rhythm/config.hpp"
#include "rhythm/denoiser.hpp"
#include "rhythm/errors.hpp"
#include "rhythm/gradcheck.hpp"
#include "rhythm/motion.hpp"
#include "rhythm/periodicity.hpp"
#include "rhythm/ssm.hpp"

using namespace rhythm;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitBadInput = 2;

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path);
    os << text;
    if (!os) throw IoError("write failed for " + path);
}

ordered_json analysis_report(const MotionAnalysis& ma) {
    ordered_json report;
    report["keyframes"] = ma.keyframes.keyframes;
    report["weights"] = ma.keyframes.weights;

    ordered_json segments = ordered_json::array();
    for (const auto& diag : ma.keyframes.per_segment)
        segments.push_back({{"start", diag.span.start},
                            {"end", diag.span.end},
                            {"d_c", diag.d_c},
                            {"k", diag.keyframe_local_indices.size()}});
    report["segments"] = std::move(segments);

    ordered_json periods = ordered_json::array();
    for (const auto& rep : ma.phase.reports)
        periods.push_back({{"start", rep.span.start},
                           {"end", rep.span.end},
                           {"periodic", rep.periodic},
                           {"T", rep.period},
                           {"peak_lag", rep.peak_lag},
                           {"peak_value", rep.peak_value},
                           {"entropy", rep.entropy}});
    report["period_segments"] = std::move(periods);
    return report;
}

int cmd_analyze(const CliConfig& cfg, const std::string& input, int segments, const std::string& out,
                const std::string& phase_out) {
    const MotionSequence seq = load_motion(input);
    AnalysisConfig acfg = cfg.analysis;
    if (segments > 0) acfg.num_segments = segments;

    const MotionAnalysis ma = analyze_motion(seq, acfg);
    write_text(out, analysis_report(ma).dump(2) + "\n");

    if (!phase_out.empty()) {
        std::ostringstream os;
        os << "phi,sin,cos\n";
        char buf[96];
        for (int t = 0; t < seq.length(); ++t) {
            std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", ma.phase.phi[t], ma.phase.phase_encoding(t, 0),
                          ma.phase.phase_encoding(t, 1));
            os << buf;
        }
        write_text(phase_out, os.str());
    }

    int periodic_segments = 0;
    for (const auto& rep : ma.phase.reports) periodic_segments += rep.periodic ? 1 : 0;
    std::cerr << "analyzed " << seq.length() << " frames: " << ma.keyframes.keyframes.size() << " keyframes, "
              << periodic_segments << "/" << ma.phase.reports.size() << " periodic segments\n";
    return kExitOk;
}

int cmd_synth(const std::string& out, int length, int dim, int period, double amp, double noise, uint64_t seed) {
    MotionSequence seq = synth_periodic_motion(length, dim, period, amp, noise, seed);
    save_motion(seq, out);
    std::cerr << "wrote " << out << " (" << length << "x" << dim << ", T=" << period << ")\n";
    return kExitOk;
}

int cmd_train(const CliConfig& cfg, const std::string& out_prefix, const std::string& loss_out) {
    Model model = Model::init(cfg.model, cfg.diffusion.layers, hash_mix(cfg.seed, 0x696e6974ULL));
    const auto dataset = make_toy_dataset(cfg.dataset, cfg.model.d_model, cfg.analysis);
    std::cerr << "training on " << dataset.size() << " sequences (L=" << cfg.dataset.length << ", D="
              << cfg.dataset.motion_dim << "), " << cfg.train.steps << " steps, batch " << cfg.train.batch << "\n";

    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<double> losses = train(model, dataset, cfg.diffusion, cfg.train);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    save_checkpoint(model, cfg.diffusion, out_prefix);
    if (!loss_out.empty()) write_loss_curve(losses, loss_out);
    std::cerr << "trained in " << secs << " s; loss " << losses.front() << " -> " << losses.back() << "; wrote "
              << out_prefix << ".json/.bin\n";
    return kExitOk;
}

int cmd_sample(const CliConfig& cfg, const std::string& ckpt, const std::string& out, int text_class, int length,
               int steps, double guidance, uint64_t seed) {
    DiffusionConfig dcfg;
    Model model = load_checkpoint(ckpt, &dcfg);
    if (steps > 0) dcfg.sample_steps = steps;
    if (guidance >= 0.0) dcfg.guidance_scale = guidance;

    SampleOptions opts;
    opts.length = length;
    opts.text_class = text_class;
    opts.seed = seed;
    opts.text_seed = cfg.dataset.text_seed;
    opts.analysis = cfg.analysis;

    const MotionSequence seq = sample(model, dcfg, opts);
    save_motion(seq, out);
    std::cerr << "sampled class " << text_class << " -> " << out << "\n";
    return kExitOk;
}

int cmd_gradcheck(const std::string& module, uint64_t seed) {
    std::vector<GradCheckReport> reports;
    if (module == "all" || module == "ssm") reports.push_back(gradcheck_ssm(seed));
    if (module == "all" || module == "attn" || module == "pdcam") reports.push_back(gradcheck_attn(seed));
    if (module == "all" || module == "model") reports.push_back(gradcheck_model(seed));
    if (reports.empty()) {
        std::cerr << "unknown module '" << module << "' (want all|ssm|attn|model)\n";
        return kExitBadInput;
    }

    bool ok = true;
    for (const auto& rep : reports) {
        std::printf("%s: max rel err %.3e (tolerance %.0e, %zu groups)\n", rep.module.c_str(), rep.worst(),
                    rep.tolerance, rep.groups.size());
        for (const auto& g : rep.groups)
            if (g.max_rel_err > rep.tolerance)
                std::printf("  FAIL %s: %.3e over %d entries\n", g.name.c_str(), g.max_rel_err, g.entries_checked);
        ok = ok && rep.passed();
    }
    return ok ? kExitOk : kExitCheckFailed;
}

int cmd_bench(const std::string& lengths_csv, int dim, int d_inner, int n_state, int reps, double max_ratio) {
    std::vector<int> lengths;
    std::stringstream ss(lengths_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) lengths.push_back(std::stoi(tok));
    if (lengths.empty()) throw ArgumentError("bench: no lengths given");

    Rng rng(1);
    SsmBlockParams params = SsmBlockParams::init(dim, d_inner, n_state, rng);

    std::printf("L,median_ms\n");
    std::vector<double> medians;
    for (int L : lengths) {
        MatT<float> X(L, dim);
        for (auto& v : X.a) v = static_cast<float>(rng.normal());
        const std::vector<float> M(L, 1.0f);
        MatT<float> Phi(L, 2);
        for (auto& v : Phi.a) v = static_cast<float>(rng.normal());

        std::vector<double> times;
        for (int r = 0; r < reps; ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            const MatT<float> y = ssm_block_forward<float>(X, M, Phi, params);
            const auto t1 = std::chrono::steady_clock::now();
            times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
            if (!all_finite(y)) throw ValidationError("bench: non-finite output");
        }
        std::sort(times.begin(), times.end());
        const double median = times[times.size() / 2];
        medians.push_back(median);
        std::printf("%d,%.4f\n", L, median);
    }

    if (lengths.size() >= 2) {
        // least-squares slope of log t vs log L
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        const int n = static_cast<int>(lengths.size());
        for (int i = 0; i < n; ++i) {
            const double x = std::log(static_cast<double>(lengths[i]));
            const double y = std::log(medians[i]);
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        std::cerr << "log-log slope: " << slope << "\n";
    }

    if (max_ratio > 0.0) {
        for (size_t i = 1; i < lengths.size(); ++i) {
            if (lengths[i] != 2 * lengths[i - 1]) continue;
            const double ratio = medians[i] / medians[i - 1];
            std::cerr << "t(" << lengths[i] << ")/t(" << lengths[i - 1] << ") = " << ratio << "\n";
            if (ratio > max_ratio) return kExitCheckFailed;
        }
    }
    return kExitOk;
}

int cmd_acf(const std::string& input, bool use_naive, const std::string& out) {
    const MotionSequence seq = load_motion(input);
    const std::vector<double> x = mean_signal(seq.frames);
    const AcfResult acf = use_naive ? autocorrelation_naive(x) : autocorrelation_fft(x);

    std::ostringstream os;
    os << "lag,R\n";
    char buf[64];
    for (size_t tau = 0; tau < acf.r.size(); ++tau) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", tau, acf.r[tau]);
        os << buf;
    }
    write_text(out, os.str());
    std::cerr << (use_naive ? "naive" : "fft") << " ACF over " << acf.r.size() << " lags"
              << (acf.zero_power ? " (zero power)" : "") << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"periodicity- and keyframe-aware sequence model toolkit"};
    app.require_subcommand(1);
    app.fallthrough();  // --config/--seed may follow the subcommand

    std::string config_path;
    uint64_t seed_override = 0;
    app.add_option("--config", config_path, "JSON config file");
    app.add_flag_callback("--version", [] { std::cout << "rhythm 0.1.0\n"; std::exit(0); }, "print version");
    auto* seed_opt = app.add_option("--seed", seed_override, "override the config seed");

    // analyze
    auto* analyze = app.add_subcommand("analyze", "keyframe + periodicity report for a motion file");
    std::string an_input, an_out, an_phase_out;
    int an_segments = 0;
    analyze->add_option("input", an_input, "motion file (.csv or .mbin)")->required();
    analyze->add_option("--segments", an_segments, "DPC segment count (default ceil(L/32))");
    analyze->add_option("--out", an_out, "report JSON path (default stdout)");
    analyze->add_option("--phase-out", an_phase_out, "optional phi/Phi csv dump");

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic periodic motion file");
    std::string sy_out;
    int sy_length = 64, sy_dim = 1, sy_period = 16;
    double sy_amp = 1.0, sy_noise = 0.0;
    synth->add_option("--out", sy_out, "output motion file")->required();
    synth->add_option("--length", sy_length, "frames");
    synth->add_option("--dim", sy_dim, "feature dimensions");
    synth->add_option("--period", sy_period, "period in frames");
    synth->add_option("--amp", sy_amp, "amplitude");
    synth->add_option("--noise", sy_noise, "Gaussian noise sigma");

    // train
    auto* train_cmd = app.add_subcommand("train", "train the toy denoiser and write a checkpoint");
    std::string tr_out = "checkpoint", tr_loss_out;
    int tr_steps = 0, tr_batch = 0, tr_layers = 0;
    train_cmd->add_option("--out", tr_out, "checkpoint prefix (writes <prefix>.json/.bin)");
    train_cmd->add_option("--loss-out", tr_loss_out, "loss curve csv path");
    train_cmd->add_option("--steps", tr_steps, "training steps");
    train_cmd->add_option("--batch", tr_batch, "batch size");
    train_cmd->add_option("--layers", tr_layers, "model depth");

    // sample
    auto* sample_cmd = app.add_subcommand("sample", "draw a motion sample from a checkpoint");
    std::string sa_ckpt, sa_out;
    int sa_class = 0, sa_length = 64, sa_steps = 0;
    double sa_guidance = -1.0;
    sample_cmd->add_option("--ckpt", sa_ckpt, "checkpoint prefix")->required();
    sample_cmd->add_option("--out", sa_out, "output motion file")->required();
    sample_cmd->add_option("--class", sa_class, "text class id");
    sample_cmd->add_option("--length", sa_length, "frames to generate");
    sample_cmd->add_option("--steps", sa_steps, "sampler steps (default from checkpoint)");
    sample_cmd->add_option("--guidance", sa_guidance, "guidance scale (default from checkpoint)");

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    std::string gc_module = "all";
    gradcheck->add_option("--module", gc_module, "all|ssm|attn|model");

    // bench
    auto* bench = app.add_subcommand("bench", "SSM block forward timing (single precision)");
    std::string be_lengths = "128,256,512,1024";
    int be_dim = 64, be_d_inner = 128, be_n_state = 16, be_reps = 9;
    double be_max_ratio = 0.0;
    bench->add_option("--lengths", be_lengths, "comma-separated sequence lengths");
    bench->add_option("--dim", be_dim, "model width");
    bench->add_option("--d-inner", be_d_inner, "inner width");
    bench->add_option("--n-state", be_n_state, "state size");
    bench->add_option("--reps", be_reps, "repetitions per length (median reported)");
    bench->add_option("--max-ratio", be_max_ratio, "fail (exit 1) if t(2L)/t(L) exceeds this");

    // acf
    auto* acf = app.add_subcommand("acf", "dump the autocorrelation of a motion file's mean signal");
    std::string ac_input, ac_out;
    bool ac_naive = false, ac_fft = false;
    acf->add_option("--input", ac_input, "motion file")->required();
    acf->add_flag("--naive", ac_naive, "O(L^2) reference implementation");
    acf->add_flag("--fft", ac_fft, "power-spectrum implementation (default)");
    acf->add_option("--out", ac_out, "csv output (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitBadInput;
    }

    try {
        CliConfig cfg = config_path.empty() ? default_config() : load_config(config_path);
        if (seed_opt->count() > 0) {
            cfg.seed = seed_override;
            cfg.diffusion.seed = seed_override;
            cfg.train.seed = seed_override;
            cfg.dataset.seed = hash_mix(seed_override, 0x64617461ULL);
        }
        validate_config(cfg);

        if (*analyze) return cmd_analyze(cfg, an_input, an_segments, an_out, an_phase_out);
        if (*synth) return cmd_synth(sy_out, sy_length, sy_dim, sy_period, sy_amp, sy_noise, cfg.seed);
        if (*train_cmd) {
            if (tr_steps > 0) cfg.train.steps = tr_steps;
            if (tr_batch > 0) cfg.train.batch = tr_batch;
            if (tr_layers > 0) cfg.diffusion.layers = tr_layers;
            validate_config(cfg);
            return cmd_train(cfg, tr_out, tr_loss_out);
        }
        if (*sample_cmd) return cmd_sample(cfg, sa_ckpt, sa_out, sa_class, sa_length, sa_steps, sa_guidance, cfg.seed);
        if (*gradcheck) return cmd_gradcheck(gc_module, cfg.seed);
        if (*bench) return cmd_bench(be_lengths, be_dim, be_d_inner, be_n_state, be_reps, be_max_ratio);
        if (*acf) {
            if (ac_naive && ac_fft) throw ArgumentError("acf: pick one of --naive / --fft");
            return cmd_acf(ac_input, ac_naive, ac_out);
        }
        return kExitBadInput;
    } catch (const ArgumentError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadInput;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadInput;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadInput;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBadInput;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitCheckFailed;
    }
}
