// SPDX-License-Identifier: Apache-2.0

#include "rhythm/motion.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "rhythm/errors.hpp"
#include "rhythm/rng.hpp"

namespace rhythm {

namespace {

constexpr char kMagic[4] = {'T', '2', 'M', 'M'};

void put_u32_le(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff), static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32_le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) | (static_cast<uint32_t>(b[2]) << 16)
         | (static_cast<uint32_t>(b[3]) << 24);
}

double parse_float_cell(const std::string& cell, const std::string& path) {
    const char* s = cell.c_str();
    char* end = nullptr;
    const double v = std::strtod(s, &end);
    if (end == s || *end != '\0') throw FormatError(path + ": cannot parse '" + cell + "' as a number");
    return v;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

void validate_motion(const MotionSequence& seq) {
    if (seq.length() < 2) throw ValidationError("motion: need at least 2 frames, got " + std::to_string(seq.length()));
    if (seq.dim() < 1) throw ValidationError("motion: need at least 1 feature dimension");
    if (!(seq.fps > 0.0)) throw ValidationError("motion: fps must be positive");
    if (!all_finite(seq.frames)) throw ValidationError("motion: frames contain NaN or Inf");
}

MotionFormat format_from_path(const std::string& path) {
    const auto ext = std::filesystem::path(path).extension().string();
    if (ext == ".csv") return MotionFormat::csv;
    if (ext == ".mbin") return MotionFormat::mbin;
    throw ArgumentError("unrecognized motion file extension '" + ext + "' (want .csv or .mbin)");
}

static MotionSequence load_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path);

    std::string header;
    if (!std::getline(is, header)) throw FormatError(path + ": empty file");
    auto cells = split_csv_line(trim(header));
    if (cells.empty() || cells[0].rfind("fps=", 0) != 0)
        throw FormatError(path + ": header must start with fps=<value>");
    const double fps = parse_float_cell(cells[0].substr(4), path);
    const int D = static_cast<int>(cells.size()) - 1;
    if (D < 1) throw FormatError(path + ": header declares no feature columns");

    std::vector<double> values;
    std::string line;
    int rows = 0;
    while (std::getline(is, line)) {
        line = trim(line);
        if (line.empty()) continue;
        auto row = split_csv_line(line);
        if (static_cast<int>(row.size()) != D)
            throw FormatError(path + ": row " + std::to_string(rows) + " has " + std::to_string(row.size())
                              + " cells, expected " + std::to_string(D));
        for (const auto& c : row) values.push_back(parse_float_cell(c, path));
        ++rows;
    }

    MotionSequence seq;
    seq.frames = Mat(rows, D, std::move(values));
    seq.fps = fps;
    seq.name = std::filesystem::path(path).stem().string();
    validate_motion(seq);
    return seq;
}

static void save_csv(const MotionSequence& seq, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path);
    char buf[64];
    std::snprintf(buf, sizeof buf, "fps=%.17g", seq.fps);
    os << buf;
    for (int d = 0; d < seq.dim(); ++d) os << ",c" << d;
    os << "\n";
    for (int t = 0; t < seq.length(); ++t) {
        for (int d = 0; d < seq.dim(); ++d) {
            std::snprintf(buf, sizeof buf, "%.17g", seq.frames(t, d));
            os << (d ? "," : "") << buf;
        }
        os << "\n";
    }
    if (!os) throw IoError("write failed for " + path);
}

static MotionSequence load_mbin(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);

    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) throw FormatError(path + ": bad magic, not an mbin file");
    const uint32_t L = get_u32_le(is);
    const uint32_t D = get_u32_le(is);
    const uint32_t milli_fps = get_u32_le(is);
    if (!is) throw FormatError(path + ": truncated header");

    const size_t count = static_cast<size_t>(L) * D;
    std::vector<float> payload(count);
    is.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (!is) throw FormatError(path + ": truncated payload");

    MotionSequence seq;
    seq.frames = Mat(static_cast<int>(L), static_cast<int>(D));
    for (size_t i = 0; i < count; ++i) seq.frames.a[i] = static_cast<double>(payload[i]);
    seq.fps = static_cast<double>(milli_fps) / 1000.0;
    seq.name = std::filesystem::path(path).stem().string();
    validate_motion(seq);
    return seq;
}

static void save_mbin(const MotionSequence& seq, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path);
    os.write(kMagic, 4);
    put_u32_le(os, static_cast<uint32_t>(seq.length()));
    put_u32_le(os, static_cast<uint32_t>(seq.dim()));
    put_u32_le(os, static_cast<uint32_t>(std::llround(seq.fps * 1000.0)));
    std::vector<float> payload(seq.frames.size());
    for (size_t i = 0; i < payload.size(); ++i) payload[i] = static_cast<float>(seq.frames.a[i]);
    os.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (!os) throw IoError("write failed for " + path);
}

MotionSequence load_motion(const std::string& path, MotionFormat format) {
    return format == MotionFormat::csv ? load_csv(path) : load_mbin(path);
}

void save_motion(const MotionSequence& seq, const std::string& path, MotionFormat format) {
    validate_motion(seq);
    if (format == MotionFormat::csv)
        save_csv(seq, path);
    else
        save_mbin(seq, path);
}

MotionSequence synth_periodic_motion(int L, int D, int period, double amp, double noise_sigma, uint64_t seed) {
    if (period < 2) throw ArgumentError("synth: period must be >= 2");
    if (L < 2 * period)
        throw ArgumentError("synth: need L >= 2*period to make the period recoverable (L=" + std::to_string(L)
                            + ", period=" + std::to_string(period) + ")");
    if (D < 1) throw ArgumentError("synth: D must be >= 1");
    if (noise_sigma < 0.0) throw ArgumentError("synth: noise_sigma must be >= 0");

    Rng rng(hash_mix(seed, 0x73796e7468ULL));
    MotionSequence seq;
    seq.frames = Mat(L, D);
    const double two_pi = 2.0 * M_PI;
    for (int t = 0; t < L; ++t)
        for (int d = 0; d < D; ++d) {
            const double clean = amp * std::sin(two_pi * t / period + two_pi * d / D);
            seq.frames(t, d) = clean + (noise_sigma > 0.0 ? noise_sigma * rng.normal() : 0.0);
        }
    seq.name = "synth_T" + std::to_string(period);
    return seq;
}

TextEmbedding stub_text_embedding(int class_id, int L_t, int D, uint64_t seed) {
    if (L_t < 1 || D < 1) throw ArgumentError("stub_text_embedding: L_t and D must be >= 1");
    if (class_id < 0) throw ArgumentError("stub_text_embedding: class_id must be non-negative");

    TextEmbedding emb;
    emb.class_id = class_id;
    emb.tokens = Mat(L_t, D);
    for (int r = 0; r < L_t; ++r) {
        // per-row stream so row r does not depend on L_t
        Rng rng(hash_mix(hash_mix(seed, static_cast<uint64_t>(class_id)), static_cast<uint64_t>(r)));
        double norm_sq = 0.0;
        for (int d = 0; d < D; ++d) {
            const double v = rng.normal();
            emb.tokens(r, d) = v;
            norm_sq += v * v;
        }
        const double inv = 1.0 / std::sqrt(norm_sq > 0.0 ? norm_sq : 1.0);
        for (int d = 0; d < D; ++d) emb.tokens(r, d) *= inv;
    }
    return emb;
}

}  // namespace rhythm
