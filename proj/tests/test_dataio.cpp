#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <memory>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "temgnet/dataio.hpp"
#include "temgnet/evalstats.hpp"
#include "temgnet/training.hpp"

using namespace temgnet;

namespace {

struct TempDir {
    std::filesystem::path dir;
    TempDir() {
        dir = std::filesystem::temp_directory_path() /
              ("temgnet_test_" + std::to_string(::getpid()) + "_" +
               std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        std::filesystem::create_directories(dir);
    }
    ~TempDir() { std::filesystem::remove_all(dir); }
    std::string path(const std::string& name) const { return (dir / name).string(); }
};

EmgRecording random_recording(std::uint64_t seed, std::size_t t = 300) {
    Rng rng(seed);
    EmgRecording rec;
    rec.subject = 7;
    rec.sample_rate_hz = 2000.0;
    rec.channels.assign(12, {});
    for (auto& ch : rec.channels)
        for (std::size_t i = 0; i < t; ++i) ch.push_back(rng.uniform(-2.0, 2.0));
    for (std::size_t i = 0; i < t; ++i) {
        rec.labels.push_back(static_cast<std::uint8_t>(rng.uniform_int(18)));
        rec.repetitions.push_back(static_cast<std::uint8_t>(rng.uniform_int(7)));
    }
    return rec;
}

}  // namespace

TEST_CASE("canonical round trip is exact at 32-bit signal precision") {
    TempDir tmp;
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        EmgRecording rec = random_recording(seed);
        const std::string path = tmp.path("rec.bin");
        save_canonical(path, rec);
        EmgRecording back = load_canonical(path);
        REQUIRE(back.subject == rec.subject);
        REQUIRE(back.sample_rate_hz == rec.sample_rate_hz);
        REQUIRE(back.labels == rec.labels);
        REQUIRE(back.repetitions == rec.repetitions);
        REQUIRE(back.channels.size() == rec.channels.size());
        for (std::size_t c = 0; c < rec.channels.size(); ++c)
            for (std::size_t i = 0; i < rec.samples(); ++i)
                REQUIRE(back.channels[c][i] ==
                        static_cast<double>(static_cast<float>(rec.channels[c][i])));
    }
}

TEST_CASE("already-f32 values survive the canonical round trip bit-exactly") {
    TempDir tmp;
    EmgRecording rec = random_recording(4, 64);
    for (auto& ch : rec.channels)
        for (auto& v : ch) v = static_cast<double>(static_cast<float>(v));
    save_canonical(tmp.path("rec.bin"), rec);
    EmgRecording back = load_canonical(tmp.path("rec.bin"));
    REQUIRE(back.channels == rec.channels);
}

TEST_CASE("a truncated canonical file is rejected with a byte offset") {
    TempDir tmp;
    EmgRecording rec = random_recording(5, 50);
    const std::string path = tmp.path("rec.bin");
    save_canonical(path, rec);
    auto bytes = detail::read_file_bytes(path);
    bytes.resize(bytes.size() / 2);
    detail::write_file_bytes(path, bytes);
    REQUIRE_THROWS_MATCHES(load_canonical(path), FormatError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("byte")));
}

TEST_CASE("a sample-count mismatch in the header is named") {
    TempDir tmp;
    EmgRecording rec = random_recording(6, 50);
    const std::string path = tmp.path("rec.bin");
    save_canonical(path, rec);
    auto bytes = detail::read_file_bytes(path);
    // sample count lives after magic(8) + version(4) + subject(4) +
    // channel count(4) + sample rate(8)
    bytes[28] += 1;
    detail::write_file_bytes(path, bytes);
    REQUIRE_THROWS_MATCHES(load_canonical(path), FormatError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("declares")));
}

TEST_CASE("bad magic and unknown versions are refused") {
    TempDir tmp;
    EmgRecording rec = random_recording(7, 50);
    const std::string path = tmp.path("rec.bin");
    save_canonical(path, rec);
    auto bytes = detail::read_file_bytes(path);
    auto patched = bytes;
    patched[0] = 'X';
    detail::write_file_bytes(path, patched);
    REQUIRE_THROWS_MATCHES(load_canonical(path), FormatError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("magic")));
    patched = bytes;
    patched[8] = 99;
    detail::write_file_bytes(path, patched);
    REQUIRE_THROWS_MATCHES(load_canonical(path), FormatError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("version")));
    REQUIRE_THROWS_AS(load_canonical(tmp.path("absent.bin")), MissingInputError);
}

TEST_CASE("csv round trip preserves doubles exactly") {
    TempDir tmp;
    EmgRecording rec = random_recording(8, 40);
    const std::string path = tmp.path("rec.csv");
    save_recording_csv(path, rec);
    EmgRecording back = load_recording_csv(path, rec.subject, rec.sample_rate_hz);
    REQUIRE(back.channels == rec.channels);
    REQUIRE(back.labels == rec.labels);
    REQUIRE(back.repetitions == rec.repetitions);
    REQUIRE(back.subject == rec.subject);
}

TEST_CASE("csv loader enforces the header and field shapes") {
    TempDir tmp;
    const std::string path = tmp.path("bad.csv");

    auto write = [&](const std::string& text) {
        std::ofstream out(path, std::ios::trunc);
        out << text;
    };

    write("ch01,ch02,label\n");  // header must end with label,repetition
    REQUIRE_THROWS_MATCHES(load_recording_csv(path), FormatError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("header")));

    write("ch01,ch02,label,repetition\n1.0,2.0,1\n");
    REQUIRE_THROWS_MATCHES(load_recording_csv(path), FormatError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("line 2")));

    write("ch01,ch02,label,repetition\n1.0,abc,1,1\n");
    REQUIRE_THROWS_MATCHES(load_recording_csv(path), FormatError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("not a number")));

    write("ch01,ch02,label,repetition\n1.0,2.0,19,1\n");
    REQUIRE_THROWS_MATCHES(load_recording_csv(path), FormatError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("label")));

    write("");
    REQUIRE_THROWS_AS(load_recording_csv(path), FormatError);
}

TEST_CASE("csv loader accepts CRLF line endings") {
    TempDir tmp;
    const std::string path = tmp.path("crlf.csv");
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    out << "ch01,ch02,label,repetition\r\n0.5,-0.25,3,2\r\n";
    out.close();
    EmgRecording rec = load_recording_csv(path);
    REQUIRE(rec.samples() == 1);
    REQUIRE(rec.channels[0][0] == 0.5);
    REQUIRE(rec.channels[1][0] == -0.25);
    REQUIRE(rec.labels[0] == 3);
    REQUIRE(rec.repetitions[0] == 2);
}

TEST_CASE("import maps a 100-sample fixture index for index") {
    const std::size_t t = 100;
    std::vector<std::vector<double>> emg(t, std::vector<double>(12));
    std::vector<int> stim(t), rep(t);
    for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t c = 0; c < 12; ++c)
            emg[i][c] = static_cast<double>(i) + static_cast<double>(c) / 100.0;
        stim[i] = static_cast<int>(i % 18);
        rep[i] = static_cast<int>(i % 7);
    }
    EmgRecording rec = import_ninapro(emg, stim, rep, 23);
    REQUIRE(rec.subject == 23);
    REQUIRE(rec.samples() == t);
    REQUIRE(rec.channel_count() == 12);
    for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t c = 0; c < 12; ++c) REQUIRE(rec.channels[c][i] == emg[i][c]);
        REQUIRE(rec.labels[i] == static_cast<std::uint8_t>(stim[i]));
        REQUIRE(rec.repetitions[i] == static_cast<std::uint8_t>(rep[i]));
    }
}

TEST_CASE("import rejects wrong channel counts and foreign codes") {
    std::vector<std::vector<double>> ten_cols(5, std::vector<double>(10, 0.0));
    std::vector<int> zeros(5, 0);
    REQUIRE_THROWS_MATCHES(import_ninapro(ten_cols, zeros, zeros, 1), FormatError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("10 channels")));

    std::vector<std::vector<double>> ok(5, std::vector<double>(12, 0.0));
    std::vector<int> bad_stim(5, 0);
    bad_stim[3] = 18;
    REQUIRE_THROWS_AS(import_ninapro(ok, bad_stim, zeros, 1), FormatError);
    std::vector<int> bad_rep(5, 0);
    bad_rep[2] = 7;
    REQUIRE_THROWS_AS(import_ninapro(ok, zeros, bad_rep, 1), FormatError);
    REQUIRE_THROWS_AS(import_ninapro({}, {}, {}, 1), FormatError);
    REQUIRE_THROWS_AS(import_ninapro(ok, {0, 0}, zeros, 1), FormatError);
}

TEST_CASE("an all-zero stimulus imports as pure rest") {
    std::vector<std::vector<double>> emg(20, std::vector<double>(12, 0.25));
    std::vector<int> zeros(20, 0);
    EmgRecording rec = import_ninapro(emg, zeros, zeros, 2);
    for (std::uint8_t l : rec.labels) REQUIRE(l == 0);
    for (std::uint8_t r : rec.repetitions) REQUIRE(r == 0);
}

TEST_CASE("checkpoint round trip restores every tensor bit for bit") {
    TempDir tmp;
    ModelConfig cfg;
    cfg.layers = 2;
    cfg.dim = 16;
    cfg.mlp_size = 24;
    cfg.heads = 4;
    cfg.patch_side = 12;
    cfg.window_samples = 48;
    cfg.n_classes = 5;
    cfg.dropout_rate = 0.25;
    TemgNet net = init_params(cfg, 404);
    const std::string path = tmp.path("model.ckpt");
    save_checkpoint(path, net);
    TemgNet back = load_checkpoint(path);
    REQUIRE(back.config.layers == cfg.layers);
    REQUIRE(back.config.dim == cfg.dim);
    REQUIRE(back.config.dropout_rate == cfg.dropout_rate);
    REQUIRE(back.init_seed == 404);
    std::vector<std::pair<std::string, std::vector<double>>> orig;
    net.for_each_param(
        [&](const std::string& n, Tensor& t) { orig.emplace_back(n, t.values()); });
    std::size_t i = 0;
    back.for_each_param([&](const std::string& n, Tensor& t) {
        REQUIRE(n == orig[i].first);
        REQUIRE(t.values() == orig[i].second);
        ++i;
    });
    REQUIRE(i == orig.size());
}

TEST_CASE("checkpoint tampering is caught") {
    TempDir tmp;
    ModelConfig cfg;
    cfg.layers = 1;
    cfg.dim = 8;
    cfg.mlp_size = 16;
    cfg.heads = 2;
    cfg.patch_side = 12;
    cfg.window_samples = 48;
    cfg.n_classes = 5;
    TemgNet net = init_params(cfg, 1);
    const std::string path = tmp.path("model.ckpt");
    save_checkpoint(path, net);
    auto bytes = detail::read_file_bytes(path);

    auto patched = bytes;
    patched[3] = 'Z';
    detail::write_file_bytes(path, patched);
    REQUIRE_THROWS_AS(load_checkpoint(path), FormatError);

    patched = bytes;
    patched.resize(patched.size() - 5);
    detail::write_file_bytes(path, patched);
    REQUIRE_THROWS_MATCHES(load_checkpoint(path), FormatError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("truncated")));

    patched = bytes;
    patched.push_back(0);
    detail::write_file_bytes(path, patched);
    REQUIRE_THROWS_MATCHES(load_checkpoint(path), FormatError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("trailing")));
}

TEST_CASE("a trained checkpoint reproduces its source model's predictions") {
    TempDir tmp;
    SynthSpec spec;
    spec.n_classes = 2;
    spec.repetitions = 2;
    spec.movement_seconds = 0.2;
    spec.rest_seconds = 0.05;
    spec.noise_level = 0.05;
    spec.seed = 12;
    EmgRecording rec = synth_generate(spec);
    auto shared = std::make_shared<EmgRecording>(std::move(rec));
    SegmentDataset ds = segment(shared, 24.0, 24.0);

    ModelConfig cfg;
    cfg.layers = 1;
    cfg.dim = 8;
    cfg.mlp_size = 16;
    cfg.heads = 2;
    cfg.patch_side = 12;
    cfg.window_samples = 48;
    cfg.n_classes = 2;
    TemgNet net = init_params(cfg, 9);
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 32;
    tc.learning_rate = 1e-3;
    train(net, ds, tc);

    const std::string path = tmp.path("trained.ckpt");
    save_checkpoint(path, net);
    TemgNet back = load_checkpoint(path);
    EvalReport a = evaluate(net, ds);
    EvalReport b = evaluate(back, ds);
    REQUIRE(a.predictions == b.predictions);
    REQUIRE(a.accuracy == b.accuracy);
}

TEST_CASE("synthetic generation is deterministic per seed") {
    SynthSpec spec;
    spec.n_classes = 2;
    spec.repetitions = 2;
    spec.movement_seconds = 0.1;
    spec.rest_seconds = 0.05;
    spec.seed = 77;
    EmgRecording a = synth_generate(spec);
    EmgRecording b = synth_generate(spec);
    REQUIRE(a.channels == b.channels);
    REQUIRE(a.labels == b.labels);
    REQUIRE(a.repetitions == b.repetitions);
    spec.seed = 78;
    EmgRecording c = synth_generate(spec);
    REQUIRE(a.channels != c.channels);
}

TEST_CASE("the generated layout follows the movement and rest durations") {
    SynthSpec spec;
    spec.n_classes = 3;
    spec.repetitions = 6;  // 5 s movement + 3 s rest at 2 kHz per region
    spec.seed = 5;
    EmgRecording rec = synth_generate(spec);
    rec.validate();
    REQUIRE(rec.samples() == 3u * 6u * (10000u + 6000u));

    // scan label runs: 18 movement regions of exactly 10,000 samples,
    // each followed by 6,000 rest samples
    std::size_t i = 0, movement_regions = 0;
    int expected_class = 1;
    int expected_rep = 1;
    while (i < rec.samples()) {
        std::size_t j = i;
        while (j < rec.samples() && rec.labels[j] == rec.labels[i] &&
               rec.repetitions[j] == rec.repetitions[i])
            ++j;
        if (rec.labels[i] != 0) {
            ++movement_regions;
            REQUIRE(j - i == 10000);
            REQUIRE(rec.labels[i] == expected_class);
            REQUIRE(rec.repetitions[i] == expected_rep);
            if (++expected_rep > 6) {
                expected_rep = 1;
                ++expected_class;
            }
        } else {
            REQUIRE(j - i == 6000);
        }
        i = j;
    }
    REQUIRE(movement_regions == 18);
}

TEST_CASE("movement energy concentrates in the class band") {
    SynthSpec spec;
    spec.n_classes = 1;
    spec.repetitions = 1;
    spec.movement_seconds = 2.0;
    spec.rest_seconds = 0.0;
    spec.noise_level = 0.0;
    spec.seed = 3;
    SynthClassSignature sig;
    sig.center_hz = 200.0;
    sig.bandwidth_hz = 15.0;
    sig.channel_amplitude.assign(12, 1.0);
    spec.signatures = {sig};
    EmgRecording rec = synth_generate(spec);

    // Goertzel-style single-bin power probe on channel 0
    auto bin_power = [&](double hz) {
        const auto& x = rec.channels[0];
        double re = 0.0, im = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double phi = 2.0 * std::numbers::pi * hz * static_cast<double>(i) / 2000.0;
            re += x[i] * std::cos(phi);
            im += x[i] * std::sin(phi);
        }
        return re * re + im * im;
    };
    double in_band = 0.0, out_band = 0.0;
    for (double hz : {190.0, 200.0, 210.0}) in_band += bin_power(hz);
    for (double hz : {50.0, 400.0, 600.0}) out_band += bin_power(hz);
    REQUIRE(in_band > 20.0 * out_band);
}

TEST_CASE("synth spec validation refuses degenerate layouts") {
    SynthSpec spec;
    spec.n_classes = 0;
    REQUIRE_THROWS_AS(synth_generate(spec), ConfigError);
    spec.n_classes = 2;
    spec.movement_seconds = 0.0;
    REQUIRE_THROWS_AS(synth_generate(spec), ConfigError);
    spec.movement_seconds = 1.0;
    spec.noise_level = -0.1;
    REQUIRE_THROWS_AS(synth_generate(spec), ConfigError);
    spec.noise_level = 0.1;

    SynthClassSignature sig;
    sig.center_hz = 100.0;
    sig.bandwidth_hz = 10.0;
    sig.channel_amplitude.assign(12, 0.5);
    spec.signatures = {sig, sig};  // identical pair
    REQUIRE_THROWS_MATCHES(synth_generate(spec), ConfigError,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("identical")));
}

TEST_CASE("a small synthetic cohort is learnable through the full pipeline") {
    SynthSpec spec;
    spec.n_classes = 3;
    spec.repetitions = 6;
    spec.movement_seconds = 1.2;
    spec.rest_seconds = 0.3;
    spec.noise_level = 0.05;
    spec.seed = 21;
    EmgRecording raw = synth_generate(spec);

    FilterSpec filter;  // defaults: order 2, 500 Hz at 2 kHz, zero phase
    EmgRecording filtered = filter_recording(raw, filter);
    ChannelScaleStats stats = compute_scale_stats(filtered, default_train_reps());
    ScaledRecording scaled = channel_scale(filtered, stats);
    EmgRecording companded = mu_law_recording(scaled.recording);

    auto shared = std::make_shared<EmgRecording>(std::move(companded));
    SegmentDataset ds = segment(shared, 200.0, 50.0);
    SplitResult split = split_by_repetition(ds, default_train_reps(), default_test_reps());
    REQUIRE(!split.train.empty());
    REQUIRE(!split.test.empty());

    ModelConfig cfg;
    cfg.layers = 1;
    cfg.dim = 8;
    cfg.mlp_size = 16;
    cfg.heads = 2;
    cfg.patch_side = 12;
    cfg.window_samples = split.train.window_samples;
    cfg.n_classes = 3;
    cfg.dropout_rate = 0.1;
    TemgNet net = init_params(cfg, 33);
    TrainConfig tc;
    tc.learning_rate = 3e-3;
    tc.batch_size = 32;
    tc.epochs = 60;
    tc.shuffle_seed = 2;
    tc.early_stop_train_accuracy = 0.999;
    train(net, split.train, tc);

    EvalReport rep = evaluate(net, split.test);
    REQUIRE(rep.accuracy >= 0.9);
}
