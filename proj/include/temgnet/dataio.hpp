#pragma once

// On-disk formats and dataset construction: the canonical binary
// recording format, a delimited-text alternative, the NinaPro-style
// importer, checkpoint serialization, and the synthetic generator.

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "temgnet/errors.hpp"
#include "temgnet/model.hpp"
#include "temgnet/recording.hpp"
#include "temgnet/rng.hpp"
#include "temgnet/sigproc.hpp"

namespace temgnet {

namespace detail {

// ---------------------------------------------------------------------------
// little-endian byte cursors
// ---------------------------------------------------------------------------

struct ByteWriter {
    std::vector<std::uint8_t> buf;

    void u8(std::uint8_t v) { buf.push_back(v); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void bytes(const char* p, std::size_t n) {
        buf.insert(buf.end(), reinterpret_cast<const std::uint8_t*>(p),
                   reinterpret_cast<const std::uint8_t*>(p) + n);
    }
};

struct ByteReader {
    const std::uint8_t* p;
    std::size_t size;
    std::size_t off = 0;

    void need(std::size_t n, const char* what) const {
        if (off + n > size)
            throw FormatError(std::string("truncated while reading ") + what + " at byte offset " +
                              std::to_string(off) + " (file has " + std::to_string(size) +
                              " bytes)");
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return p[off++];
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = 0;
        for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(p[off + i]) << (8 * i);
        off += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[off + i]) << (8 * i);
        off += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[off + i]) << (8 * i);
        off += 8;
        return v;
    }
    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
    double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
};

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingInputError("cannot open " + path + " for reading");
    in.seekg(0, std::ios::end);
    const std::streamoff len = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(len));
    if (len > 0) in.read(reinterpret_cast<char*>(buf.data()), len);
    if (!in) throw FormatError("failed reading " + std::to_string(len) + " bytes from " + path);
    return buf;
}

inline void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& buf) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
    if (!out) throw Error("failed writing " + std::to_string(buf.size()) + " bytes to " + path);
}

// shortest decimal form that parses back to the same double
inline std::string format_double(double v) {
    std::array<char, 32> tmp{};
    const auto res = std::to_chars(tmp.data(), tmp.data() + tmp.size(), v);
    return std::string(tmp.data(), res.ptr);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// canonical binary recordings
// ---------------------------------------------------------------------------

inline constexpr char kRecordingMagic[9] = "TEMGREC1";
inline constexpr std::uint32_t kRecordingVersion = 1;

// Layout, all little-endian: 8-byte magic, u32 version, u32 subject,
// u32 channel count, f64 sample rate, u64 sample count, then the signal
// as channel-major f32, then one label byte and one repetition byte per
// sample. The f32 block is the declared storage precision; memory stays
// f64.
inline void save_canonical(const std::string& path, const EmgRecording& rec) {
    rec.validate();
    detail::ByteWriter w;
    w.bytes(kRecordingMagic, 8);
    w.u32(kRecordingVersion);
    w.u32(rec.subject);
    w.u32(static_cast<std::uint32_t>(rec.channels.size()));
    w.f64(rec.sample_rate_hz);
    const std::uint64_t t = rec.samples();
    w.u64(t);
    for (const auto& ch : rec.channels)
        for (double v : ch) w.f32(static_cast<float>(v));
    for (std::uint8_t v : rec.labels) w.u8(v);
    for (std::uint8_t v : rec.repetitions) w.u8(v);
    detail::write_file_bytes(path, w.buf);
}

inline EmgRecording load_canonical(const std::string& path) {
    const auto buf = detail::read_file_bytes(path);
    detail::ByteReader r{buf.data(), buf.size()};
    r.need(8, "magic");
    if (std::memcmp(r.p, kRecordingMagic, 8) != 0)
        throw FormatError(path + ": bad magic at byte offset 0; not a canonical recording");
    r.off = 8;
    const std::uint32_t version = r.u32("version");
    if (version != kRecordingVersion)
        throw FormatError(path + ": unknown version " + std::to_string(version) +
                          " at byte offset 8; this build reads version " +
                          std::to_string(kRecordingVersion));
    EmgRecording rec;
    rec.subject = r.u32("subject");
    const std::uint32_t channels = r.u32("channel count");
    rec.sample_rate_hz = r.f64("sample rate");
    const std::uint64_t t = r.u64("sample count");
    if (channels == 0 || channels > 4096)
        throw FormatError(path + ": implausible channel count " + std::to_string(channels));
    const std::uint64_t body = (static_cast<std::uint64_t>(channels) * 4 + 2) * t;
    if (r.off + body != buf.size())
        throw FormatError(path + ": header declares " + std::to_string(t) + " samples (" +
                          std::to_string(body) + " body bytes from byte offset " +
                          std::to_string(r.off) + ") but the file holds " +
                          std::to_string(buf.size() - r.off));
    rec.channels.assign(channels, {});
    for (auto& ch : rec.channels) {
        ch.reserve(t);
        for (std::uint64_t i = 0; i < t; ++i)
            ch.push_back(static_cast<double>(r.f32("signal block")));
    }
    rec.labels.reserve(t);
    for (std::uint64_t i = 0; i < t; ++i) {
        const std::uint8_t v = r.u8("label block");
        if (v > kMaxLabel)
            throw FormatError(path + ": label " + std::to_string(v) + " at byte offset " +
                              std::to_string(r.off - 1) + " exceeds " +
                              std::to_string(kMaxLabel));
        rec.labels.push_back(v);
    }
    rec.repetitions.reserve(t);
    for (std::uint64_t i = 0; i < t; ++i) {
        const std::uint8_t v = r.u8("repetition block");
        if (v > kMaxRepetition)
            throw FormatError(path + ": repetition " + std::to_string(v) + " at byte offset " +
                              std::to_string(r.off - 1) + " exceeds " +
                              std::to_string(kMaxRepetition));
        rec.repetitions.push_back(v);
    }
    return rec;
}

// ---------------------------------------------------------------------------
// delimited text
// ---------------------------------------------------------------------------

// One row per sample: the signal columns, then label and repetition.
// The header row is required and fixes the column count.
inline void save_recording_csv(const std::string& path, const EmgRecording& rec) {
    rec.validate();
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot open " + path + " for writing");
    for (std::size_t c = 0; c < rec.channels.size(); ++c) {
        char head[16];
        std::snprintf(head, sizeof head, "ch%02zu,", c + 1);
        out << head;
    }
    out << "label,repetition\n";
    for (std::size_t i = 0; i < rec.samples(); ++i) {
        for (const auto& ch : rec.channels) out << detail::format_double(ch[i]) << ',';
        out << static_cast<int>(rec.labels[i]) << ',' << static_cast<int>(rec.repetitions[i])
            << '\n';
    }
    if (!out) throw Error("failed writing " + path);
}

inline EmgRecording load_recording_csv(const std::string& path, std::uint32_t subject = 0,
                                       double sample_rate_hz = 2000.0) {
    std::ifstream in(path);
    if (!in) throw MissingInputError("cannot open " + path + " for reading");
    std::string line;
    if (!std::getline(in, line)) throw FormatError(path + ": empty file; header row required");

    auto split = [](std::string s) {
        if (!s.empty() && s.back() == '\r') s.pop_back();
        std::vector<std::string> out;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = s.find(',', start);
            if (comma == std::string::npos) {
                out.push_back(s.substr(start));
                break;
            }
            out.push_back(s.substr(start, comma - start));
            start = comma + 1;
        }
        return out;
    };

    const auto header = split(line);
    if (header.size() < 3 || header[header.size() - 2] != "label" ||
        header.back() != "repetition")
        throw FormatError(path + ": line 1: header must end with label,repetition columns");
    const std::size_t channels = header.size() - 2;

    EmgRecording rec;
    rec.subject = subject;
    rec.sample_rate_hz = sample_rate_hz;
    rec.channels.assign(channels, {});
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = split(line);
        if (fields.size() != channels + 2)
            throw FormatError(path + ": line " + std::to_string(line_no) + ": expected " +
                              std::to_string(channels + 2) + " fields, got " +
                              std::to_string(fields.size()));
        for (std::size_t c = 0; c < channels + 2; ++c) {
            const std::string& f = fields[c];
            double v = 0.0;
            const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
            if (res.ec != std::errc{} || res.ptr != f.data() + f.size())
                throw FormatError(path + ": line " + std::to_string(line_no) + ": field " +
                                  std::to_string(c + 1) + " ('" + f + "') is not a number");
            if (c < channels) {
                rec.channels[c].push_back(v);
            } else if (c == channels) {
                if (v != std::floor(v) || v < 0 || v > kMaxLabel)
                    throw FormatError(path + ": line " + std::to_string(line_no) + ": label '" +
                                      f + "' outside 0.." + std::to_string(kMaxLabel));
                rec.labels.push_back(static_cast<std::uint8_t>(v));
            } else {
                if (v != std::floor(v) || v < 0 || v > kMaxRepetition)
                    throw FormatError(path + ": line " + std::to_string(line_no) +
                                      ": repetition '" + f + "' outside 0.." +
                                      std::to_string(kMaxRepetition));
                rec.repetitions.push_back(static_cast<std::uint8_t>(v));
            }
        }
    }
    rec.validate();
    return rec;
}

// ---------------------------------------------------------------------------
// NinaPro-style import
// ---------------------------------------------------------------------------

// Consumes already-extracted numeric arrays: a T x 12 sample-major
// signal matrix plus aligned stimulus and repetition vectors. Sample
// order and count pass through unchanged; stimulus 0 is rest and
// repetition 0 is the inter-trial sentinel, both kept as-is.
inline EmgRecording import_ninapro(const std::vector<std::vector<double>>& emg,
                                   const std::vector<int>& stimulus,
                                   const std::vector<int>& repetition, std::uint32_t subject) {
    const std::size_t t = emg.size();
    if (stimulus.size() != t || repetition.size() != t)
        throw FormatError("import: " + std::to_string(t) + " signal rows against " +
                          std::to_string(stimulus.size()) + " stimulus and " +
                          std::to_string(repetition.size()) + " repetition entries");
    if (t == 0) throw FormatError("import: no samples");
    EmgRecording rec;
    rec.subject = subject;
    rec.sample_rate_hz = 2000.0;
    rec.channels.assign(kChannelCount, {});
    for (auto& ch : rec.channels) ch.reserve(t);
    rec.labels.reserve(t);
    rec.repetitions.reserve(t);
    for (std::size_t i = 0; i < t; ++i) {
        if (emg[i].size() != kChannelCount)
            throw FormatError("import: row " + std::to_string(i) + " has " +
                              std::to_string(emg[i].size()) + " channels; expected " +
                              std::to_string(kChannelCount));
        if (stimulus[i] < 0 || stimulus[i] > static_cast<int>(kMaxLabel))
            throw FormatError("import: stimulus " + std::to_string(stimulus[i]) + " at row " +
                              std::to_string(i) + " outside 0.." + std::to_string(kMaxLabel));
        if (repetition[i] < 0 || repetition[i] > static_cast<int>(kMaxRepetition))
            throw FormatError("import: repetition " + std::to_string(repetition[i]) +
                              " at row " + std::to_string(i) + " outside 0.." +
                              std::to_string(kMaxRepetition));
        for (std::size_t c = 0; c < kChannelCount; ++c) rec.channels[c].push_back(emg[i][c]);
        rec.labels.push_back(static_cast<std::uint8_t>(stimulus[i]));
        rec.repetitions.push_back(static_cast<std::uint8_t>(repetition[i]));
    }
    return rec;
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[9] = "TEMGCKP1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Magic, version, the full model configuration, then every parameter
// tensor in canonical order as (u16 name length, name, u8 rank, u64
// dims, f64 data). Round trips are bit-exact.
inline void save_checkpoint(const std::string& path, TemgNet& model) {
    model.config.validate();
    detail::ByteWriter w;
    w.bytes(kCheckpointMagic, 8);
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(model.config.layers));
    w.u32(static_cast<std::uint32_t>(model.config.dim));
    w.u32(static_cast<std::uint32_t>(model.config.mlp_size));
    w.u32(static_cast<std::uint32_t>(model.config.heads));
    w.u32(static_cast<std::uint32_t>(model.config.patch_side));
    w.u32(static_cast<std::uint32_t>(model.config.window_samples));
    w.u32(static_cast<std::uint32_t>(model.config.n_classes));
    w.f64(model.config.dropout_rate);
    w.u8(model.config.qkv_bias ? 1 : 0);
    w.u64(model.init_seed);
    std::uint32_t count = 0;
    model.for_each_param([&](const std::string&, Tensor&) { ++count; });
    w.u32(count);
    model.for_each_param([&](const std::string& name, Tensor& t) {
        w.u16(static_cast<std::uint16_t>(name.size()));
        w.bytes(name.data(), name.size());
        w.u8(static_cast<std::uint8_t>(t.ndim()));
        for (auto d : t.shape()) w.u64(static_cast<std::uint64_t>(d));
        for (double v : t.values()) w.f64(v);
    });
    detail::write_file_bytes(path, w.buf);
}

inline TemgNet load_checkpoint(const std::string& path) {
    const auto buf = detail::read_file_bytes(path);
    detail::ByteReader r{buf.data(), buf.size()};
    r.need(8, "magic");
    if (std::memcmp(r.p, kCheckpointMagic, 8) != 0)
        throw FormatError(path + ": bad magic at byte offset 0; not a checkpoint");
    r.off = 8;
    const std::uint32_t version = r.u32("version");
    if (version != kCheckpointVersion)
        throw FormatError(path + ": unknown checkpoint version " + std::to_string(version) +
                          "; this build reads version " + std::to_string(kCheckpointVersion));
    ModelConfig cfg;
    cfg.layers = static_cast<int>(r.u32("layers"));
    cfg.dim = static_cast<int>(r.u32("dim"));
    cfg.mlp_size = static_cast<int>(r.u32("mlp_size"));
    cfg.heads = static_cast<int>(r.u32("heads"));
    cfg.patch_side = static_cast<int>(r.u32("patch_side"));
    cfg.window_samples = static_cast<int>(r.u32("window_samples"));
    cfg.n_classes = static_cast<int>(r.u32("n_classes"));
    cfg.dropout_rate = r.f64("dropout_rate");
    cfg.qkv_bias = r.u8("qkv_bias") != 0;
    const std::uint64_t seed = r.u64("init seed");
    try {
        cfg.validate();
    } catch (const Error& e) {
        throw FormatError(path + ": checkpoint carries an invalid configuration: " + e.what());
    }

    TemgNet net = init_params(cfg, seed);
    const std::uint32_t declared = r.u32("tensor count");
    std::uint32_t expected = 0;
    net.for_each_param([&](const std::string&, Tensor&) { ++expected; });
    if (declared != expected)
        throw FormatError(path + ": checkpoint holds " + std::to_string(declared) +
                          " tensors; this configuration defines " + std::to_string(expected));
    net.for_each_param([&](const std::string& name, Tensor& t) {
        const std::uint16_t len = r.u16("tensor name length");
        r.need(len, "tensor name");
        const std::string stored(reinterpret_cast<const char*>(r.p + r.off), len);
        r.off += len;
        if (stored != name)
            throw FormatError(path + ": tensor '" + stored + "' where '" + name +
                              "' was expected (byte offset " + std::to_string(r.off) + ")");
        const std::uint8_t rank = r.u8("tensor rank");
        if (rank != t.ndim())
            throw FormatError(path + ": tensor '" + name + "' has rank " +
                              std::to_string(rank) + "; expected " + std::to_string(t.ndim()));
        for (std::size_t d = 0; d < rank; ++d) {
            const std::uint64_t dim = r.u64("tensor dimension");
            if (dim != static_cast<std::uint64_t>(t.shape()[d]))
                throw FormatError(path + ": tensor '" + name + "' dimension " +
                                  std::to_string(d) + " is " + std::to_string(dim) +
                                  "; expected " + std::to_string(t.shape()[d]));
        }
        for (auto& v : t.values()) v = r.f64("tensor data");
    });
    if (r.off != buf.size())
        throw FormatError(path + ": " + std::to_string(buf.size() - r.off) +
                          " unexpected trailing bytes at offset " + std::to_string(r.off));
    return net;
}

// ---------------------------------------------------------------------------
// synthetic recordings
// ---------------------------------------------------------------------------

struct SynthClassSignature {
    double center_hz = 100.0;
    double bandwidth_hz = 10.0;
    std::vector<double> channel_amplitude;  // one gain per channel
};

struct SynthSpec {
    int n_classes = 17;
    int repetitions = 6;
    double movement_seconds = 5.0;
    double rest_seconds = 3.0;
    double sample_rate_hz = 2000.0;
    double noise_level = 0.1;
    std::uint64_t seed = 0;
    std::uint32_t subject = 1;
    int channels = kChannelCount;
    // empty -> distinct defaults derived from the class index
    std::vector<SynthClassSignature> signatures;

    void validate() const {
        if (n_classes < 1 || n_classes > static_cast<int>(kMaxLabel))
            throw ConfigError("n_classes must lie in 1.." + std::to_string(kMaxLabel));
        if (repetitions < 1 || repetitions > static_cast<int>(kMaxRepetition))
            throw ConfigError("repetitions must lie in 1.." + std::to_string(kMaxRepetition));
        if (movement_seconds <= 0.0 || rest_seconds < 0.0)
            throw ConfigError("movement duration must be positive and rest nonnegative");
        if (sample_rate_hz <= 0.0) throw ConfigError("sample rate must be positive");
        if (noise_level < 0.0) throw ConfigError("noise level must be nonnegative");
        if (channels < 1) throw ConfigError("channel count must be positive");
        if (!signatures.empty()) {
            if (signatures.size() != static_cast<std::size_t>(n_classes))
                throw ConfigError("need one signature per class");
            for (const auto& s : signatures) {
                if (s.center_hz <= 0.0 || s.bandwidth_hz <= 0.0 ||
                    s.center_hz + s.bandwidth_hz >= sample_rate_hz / 2.0)
                    throw ConfigError("signature band must lie inside (0, Nyquist)");
                if (s.channel_amplitude.size() != static_cast<std::size_t>(channels))
                    throw ConfigError("signature amplitude profile must cover every channel");
            }
            for (std::size_t i = 0; i < signatures.size(); ++i)
                for (std::size_t j = i + 1; j < signatures.size(); ++j)
                    if (signatures[i].center_hz == signatures[j].center_hz &&
                        signatures[i].bandwidth_hz == signatures[j].bandwidth_hz &&
                        signatures[i].channel_amplitude == signatures[j].channel_amplitude)
                        throw ConfigError("class signatures " + std::to_string(i + 1) + " and " +
                                          std::to_string(j + 1) + " are identical");
        }
    }
};

namespace detail {

// Distinct defaults: centers spread over 40..400 Hz (inside the usual
// 500 Hz preprocessing passband), and the amplitude profile keys each
// channel to the class by a golden-ratio hash.
inline std::vector<SynthClassSignature> default_signatures(const SynthSpec& spec) {
    std::vector<SynthClassSignature> sigs(static_cast<std::size_t>(spec.n_classes));
    const double top = std::min(400.0, spec.sample_rate_hz * 0.4);
    const double stride =
        spec.n_classes > 1 ? (top - 40.0) / static_cast<double>(spec.n_classes - 1) : 0.0;
    for (int c = 0; c < spec.n_classes; ++c) {
        auto& s = sigs[static_cast<std::size_t>(c)];
        s.center_hz = 40.0 + stride * c;
        s.bandwidth_hz = 8.0;
        s.channel_amplitude.resize(static_cast<std::size_t>(spec.channels));
        for (int ch = 0; ch < spec.channels; ++ch) {
            const double h = 0.6180339887498949 * static_cast<double>(c * spec.channels + ch + 1);
            s.channel_amplitude[static_cast<std::size_t>(ch)] = 0.25 + 0.75 * (h - std::floor(h));
        }
    }
    return sigs;
}

}  // namespace detail

// Deterministic synthetic sEMG. The layout walks classes in order, each
// contributing `repetitions` movement regions of movement_seconds
// followed by rest_seconds of rest (label 0, repetition 0). A movement
// region holds narrowband noise: per channel, white noise bandpassed to
// the class band (difference of two low-pass runs), normalized to unit
// power and scaled by the channel amplitude, plus white measurement
// noise everywhere.
inline EmgRecording synth_generate(const SynthSpec& spec) {
    spec.validate();
    const auto sigs = spec.signatures.empty() ? detail::default_signatures(spec)
                                              : spec.signatures;

    const auto n_move = static_cast<std::size_t>(std::lround(spec.movement_seconds *
                                                             spec.sample_rate_hz));
    const auto n_rest = static_cast<std::size_t>(std::lround(spec.rest_seconds *
                                                             spec.sample_rate_hz));
    EmgRecording rec;
    rec.subject = spec.subject;
    rec.sample_rate_hz = spec.sample_rate_hz;
    rec.channels.assign(static_cast<std::size_t>(spec.channels), {});
    const std::size_t total = (n_move + n_rest) * static_cast<std::size_t>(spec.n_classes) *
                              static_cast<std::size_t>(spec.repetitions);
    for (auto& ch : rec.channels) ch.reserve(total);
    rec.labels.reserve(total);
    rec.repetitions.reserve(total);

    Rng rng(spec.seed);
    std::vector<double> white(n_move);
    for (int cls = 1; cls <= spec.n_classes; ++cls) {
        const auto& sig = sigs[static_cast<std::size_t>(cls - 1)];
        FilterSpec hi, lo;
        hi.order = lo.order = 2;
        hi.sample_rate_hz = lo.sample_rate_hz = spec.sample_rate_hz;
        hi.cutoff_hz = sig.center_hz + sig.bandwidth_hz;
        lo.cutoff_hz = std::max(sig.center_hz - sig.bandwidth_hz, 1.0);
        for (int rep = 1; rep <= spec.repetitions; ++rep) {
            for (std::size_t ch = 0; ch < rec.channels.size(); ++ch) {
                for (auto& v : white) v = rng.normal();
                std::vector<double> band = butterworth_lowpass(white, hi);
                const std::vector<double> low = butterworth_lowpass(white, lo);
                double power = 0.0;
                for (std::size_t i = 0; i < n_move; ++i) {
                    band[i] -= low[i];
                    power += band[i] * band[i];
                }
                const double rms = std::sqrt(power / static_cast<double>(n_move));
                const double gain =
                    rms > 0.0 ? sig.channel_amplitude[ch] / rms : 0.0;
                for (std::size_t i = 0; i < n_move; ++i)
                    rec.channels[ch].push_back(gain * band[i] +
                                               spec.noise_level * rng.normal());
            }
            for (std::size_t i = 0; i < n_move; ++i) {
                rec.labels.push_back(static_cast<std::uint8_t>(cls));
                rec.repetitions.push_back(static_cast<std::uint8_t>(rep));
            }
            for (std::size_t ch = 0; ch < rec.channels.size(); ++ch)
                for (std::size_t i = 0; i < n_rest; ++i)
                    rec.channels[ch].push_back(spec.noise_level * rng.normal());
            for (std::size_t i = 0; i < n_rest; ++i) {
                rec.labels.push_back(0);
                rec.repetitions.push_back(0);
            }
        }
    }
    return rec;
}

}  // namespace temgnet
