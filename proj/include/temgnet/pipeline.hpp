#pragma once

// Command layer shared by the CLI and the tests. Every command reads a
// RunConfig, writes its artifacts under cfg.run_dir, and records what it
// did in a manifest. Wall-clock timings live only in manifests so that
// every other artifact of a repeated run is byte-identical.

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "temgnet/dataio.hpp"
#include "temgnet/errors.hpp"
#include "temgnet/evalstats.hpp"
#include "temgnet/model.hpp"
#include "temgnet/runconfig.hpp"
#include "temgnet/segmentation.hpp"
#include "temgnet/sigproc.hpp"
#include "temgnet/training.hpp"

namespace temgnet {

inline constexpr const char* kToolVersion = "1.0.0";

namespace detail {

inline std::string subject_tag(std::uint32_t subject) {
    std::ostringstream os;
    os << 's' << std::setw(3) << std::setfill('0') << subject;
    return os.str();
}

inline std::string join_path(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

inline void ensure_run_dir(const RunConfig& cfg) {
    if (cfg.run_dir.empty()) throw ConfigError("config key 'run_dir' is required");
    std::filesystem::create_directories(cfg.run_dir);
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path + " for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error("short write to " + path);
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingInputError("cannot open " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

inline nlohmann::json load_json_file(const std::string& path) {
    const std::string text = read_text_file(path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
}

// Seconds-resolution ISO timestamp; the single nondeterministic value in
// any artifact, confined to manifests.
inline std::string utc_now() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

class CommandTimer {
public:
    CommandTimer() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

inline void write_manifest(const RunConfig& cfg, const std::string& command,
                           nlohmann::json outputs, double wall_seconds) {
    nlohmann::json m;
    m["tool_version"] = kToolVersion;
    m["command"] = command;
    m["created_utc"] = utc_now();
    m["wall_seconds"] = wall_seconds;
    m["config"] = config_echo(cfg);
    m["outputs"] = std::move(outputs);
    write_text_file(join_path(cfg.run_dir, "manifest_" + command + ".json"), m.dump(2) + "\n");
}

// Dispatch on extension; the canonical container is the native format,
// CSV is the interchange path.
inline EmgRecording load_input(const std::string& path, std::uint32_t subject_override,
                               double csv_rate) {
    const bool csv = path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0;
    EmgRecording rec =
        csv ? load_recording_csv(path, subject_override, csv_rate) : load_canonical(path);
    if (subject_override != 0) rec.subject = subject_override;
    return rec;
}

inline std::vector<EmgRecording> load_inputs(const RunConfig& cfg) {
    if (cfg.inputs.empty()) throw ConfigError("config key 'inputs' is required for this command");
    std::vector<EmgRecording> recs;
    recs.reserve(cfg.inputs.size());
    for (std::size_t i = 0; i < cfg.inputs.size(); ++i) {
        const std::uint32_t override_id = cfg.subjects.empty() ? 0 : cfg.subjects[i];
        EmgRecording rec = load_input(cfg.inputs[i], override_id, cfg.filter.sample_rate_hz);
        if (rec.sample_rate_hz != cfg.filter.sample_rate_hz)
            throw ConfigError(cfg.inputs[i] + ": recording rate " +
                              format_double(rec.sample_rate_hz) + " Hz does not match " +
                              "filter.sample_rate_hz " + format_double(cfg.filter.sample_rate_hz) +
                              " Hz");
        recs.push_back(std::move(rec));
    }
    return recs;
}

inline SegmentDataset build_dataset(const RunConfig& cfg, std::vector<EmgRecording> recs) {
    SegmentDataset ds;
    ds.window_samples = ms_to_samples(cfg.window_ms, cfg.filter.sample_rate_hz);
    ds.step_samples = ms_to_samples(cfg.step_ms, cfg.filter.sample_rate_hz);
    for (auto& rec : recs)
        segment_into(ds, std::make_shared<const EmgRecording>(std::move(rec)), cfg.policy);
    return ds;
}

inline void check_window_match(const ModelConfig& mc, const SegmentDataset& ds) {
    if (mc.window_samples != ds.window_samples)
        throw ConfigError("model expects windows of " + std::to_string(mc.window_samples) +
                          " samples but segmentation produced " +
                          std::to_string(ds.window_samples));
}

}  // namespace detail

// Conversion and formatting helpers shared with the storage layer;
// re-exported so callers need not reach into detail.
using detail::format_double;
using detail::ms_to_samples;

// ---------------------------------------------------------------------------
// synth: generate labeled surrogate recordings
// ---------------------------------------------------------------------------

inline std::vector<std::string> cmd_synth(const RunConfig& cfg) {
    detail::CommandTimer timer;
    detail::ensure_run_dir(cfg);
    std::vector<std::string> outputs;
    for (int i = 0; i < cfg.synth_subjects; ++i) {
        SynthSpec spec = cfg.synth;
        spec.subject = static_cast<std::uint32_t>(i + 1);
        spec.seed = cfg.synth.seed + static_cast<std::uint64_t>(i);
        const EmgRecording rec = synth_generate(spec);
        const std::string path =
            detail::join_path(cfg.run_dir, "synth_" + detail::subject_tag(rec.subject) + ".bin");
        save_canonical(path, rec);
        outputs.push_back(path);
    }
    detail::write_manifest(cfg, "synth", outputs, timer.seconds());
    return outputs;
}

// ---------------------------------------------------------------------------
// preprocess: filter, train-rep amplitude scaling, mu-law compression
// ---------------------------------------------------------------------------

inline std::vector<std::string> cmd_preprocess(const RunConfig& cfg) {
    detail::CommandTimer timer;
    detail::ensure_run_dir(cfg);
    std::vector<EmgRecording> recs = detail::load_inputs(cfg);

    std::set<std::uint32_t> seen;
    for (const EmgRecording& rec : recs)
        if (!seen.insert(rec.subject).second)
            throw ConfigError("two inputs resolve to subject " + std::to_string(rec.subject) +
                              "; give distinct ids via 'subjects'");

    std::vector<std::string> outputs;
    nlohmann::json stats_summary = nlohmann::json::array();
    for (EmgRecording& rec : recs) {
        const std::string tag = detail::subject_tag(rec.subject);
        EmgRecording filtered = filter_recording(rec, cfg.filter);
        const ChannelScaleStats stats = compute_scale_stats(filtered, cfg.train_reps);
        ScaledRecording scaled = channel_scale(filtered, stats);
        EmgRecording compressed = mu_law_recording(scaled.recording, cfg.mu);

        const std::string rec_path =
            detail::join_path(cfg.run_dir, "preprocessed_" + tag + ".bin");
        save_canonical(rec_path, compressed);
        outputs.push_back(rec_path);

        nlohmann::json s;
        s["subject"] = rec.subject;
        s["max_abs"] = stats.max_abs;
        s["clamp_count"] = scaled.clamp_count;
        const std::string stats_path =
            detail::join_path(cfg.run_dir, "scale_stats_" + tag + ".json");
        detail::write_text_file(stats_path, s.dump(2) + "\n");
        outputs.push_back(stats_path);
        stats_summary.push_back(std::move(s));
    }

    nlohmann::json extra;
    extra["files"] = outputs;
    extra["scale_stats"] = std::move(stats_summary);
    detail::write_manifest(cfg, "preprocess", std::move(extra), timer.seconds());
    return outputs;
}

// ---------------------------------------------------------------------------
// segment: window inventory without training
// ---------------------------------------------------------------------------

inline std::string cmd_segment(const RunConfig& cfg) {
    detail::CommandTimer timer;
    detail::ensure_run_dir(cfg);
    const SegmentDataset ds = detail::build_dataset(cfg, detail::load_inputs(cfg));

    std::string csv = "subject,label,repetition,source,start\n";
    for (const Window& w : ds.windows) {
        csv += std::to_string(w.subject) + ',' + std::to_string(w.label) + ',' +
               std::to_string(w.repetition) + ',' + std::to_string(w.source) + ',' +
               std::to_string(w.start) + '\n';
    }
    const std::string csv_path = detail::join_path(cfg.run_dir, "windows.csv");
    detail::write_text_file(csv_path, csv);

    std::map<int, std::uint64_t> per_label, per_rep;
    for (const Window& w : ds.windows) {
        ++per_label[w.label];
        ++per_rep[w.repetition];
    }
    nlohmann::json summary;
    summary["window_samples"] = ds.window_samples;
    summary["step_samples"] = ds.step_samples;
    summary["windows"] = ds.size();
    summary["recordings"] = ds.recordings.size();
    summary["per_label"] = nlohmann::json::object();
    for (const auto& [label, n] : per_label) summary["per_label"][std::to_string(label)] = n;
    summary["per_repetition"] = nlohmann::json::object();
    for (const auto& [rep, n] : per_rep) summary["per_repetition"][std::to_string(rep)] = n;
    const std::string summary_path = detail::join_path(cfg.run_dir, "segment_summary.json");
    detail::write_text_file(summary_path, summary.dump(2) + "\n");

    detail::write_manifest(cfg, "segment", {csv_path, summary_path}, timer.seconds());
    return csv_path;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOutputs {
    std::string checkpoint_path;       // final-epoch weights
    std::string best_checkpoint_path;  // lowest-mean-loss weights
    std::string trace_path;
    TrainResult result;
};

inline TrainOutputs cmd_train(const RunConfig& cfg) {
    detail::CommandTimer timer;
    detail::ensure_run_dir(cfg);
    const SegmentDataset ds = detail::build_dataset(cfg, detail::load_inputs(cfg));
    const SplitResult split = split_by_repetition(ds, cfg.train_reps, cfg.test_reps);
    if (split.train.empty())
        throw ContractError("training split is empty; check split.train_reps against the data");

    detail::check_window_match(cfg.model, split.train);
    TemgNet net = init_params(cfg.model, cfg.init_seed);
    TrainResult result = train(net, split.train, cfg.train);

    std::string trace = "epoch,mean_loss,train_accuracy\n";
    for (const EpochStats& e : result.trace) {
        trace += std::to_string(e.epoch) + ',' + format_double(e.mean_loss) + ',' +
                 format_double(e.train_accuracy) + '\n';
    }

    TrainOutputs out;
    out.trace_path = detail::join_path(cfg.run_dir, "trace.csv");
    detail::write_text_file(out.trace_path, trace);
    out.checkpoint_path = detail::join_path(cfg.run_dir, "checkpoint.bin");
    save_checkpoint(out.checkpoint_path, net);
    out.best_checkpoint_path = detail::join_path(cfg.run_dir, "checkpoint_best.bin");
    save_checkpoint(out.best_checkpoint_path, result.best_model);

    nlohmann::json extra;
    extra["files"] = {out.checkpoint_path, out.best_checkpoint_path, out.trace_path};
    extra["epochs_run"] = result.trace.size();
    extra["best_epoch"] = result.best_epoch;
    extra["train_windows"] = split.train.size();
    extra["test_windows"] = split.test.size();
    extra["dropped_windows"] = split.dropped;
    if (!result.trace.empty()) {
        extra["final_mean_loss"] = result.trace.back().mean_loss;
        extra["final_train_accuracy"] = result.trace.back().train_accuracy;
    }
    detail::write_manifest(cfg, "train", std::move(extra), timer.seconds());
    out.result = std::move(result);
    return out;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

namespace detail {

struct SubjectReport {
    std::uint32_t subject = 0;
    EvalReport report;
};

// Scores each subject on its own thread; results are reduced in subject
// order so the output is independent of scheduling.
inline std::vector<SubjectReport> evaluate_by_subject(const TemgNet& net,
                                                      const SegmentDataset& ds) {
    std::set<std::uint32_t> ids;
    for (const Window& w : ds.windows) ids.insert(w.subject);

    std::vector<std::uint32_t> order(ids.begin(), ids.end());
    std::vector<std::future<EvalReport>> futures;
    futures.reserve(order.size());
    for (std::uint32_t id : order) {
        SegmentDataset part;
        part.window_samples = ds.window_samples;
        part.step_samples = ds.step_samples;
        part.recordings = ds.recordings;
        for (const Window& w : ds.windows)
            if (w.subject == id) part.windows.push_back(w);
        futures.push_back(std::async(std::launch::async, [&net, part = std::move(part)]() {
            return evaluate(net, part);
        }));
    }

    std::vector<SubjectReport> out;
    out.reserve(order.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        out.push_back({order[i], futures[i].get()});
    return out;
}

}  // namespace detail

struct EvaluateOutputs {
    std::string report_path;
    std::string confusion_path;
    std::string predictions_path;
    EvalReport pooled;
};

// split_name selects which repetitions are scored: "train", "test", or
// "all" (every movement window regardless of repetition).
inline EvaluateOutputs cmd_evaluate(const RunConfig& cfg, const std::string& checkpoint_path,
                                    const std::string& split_name) {
    detail::CommandTimer timer;
    detail::ensure_run_dir(cfg);
    const TemgNet net = load_checkpoint(checkpoint_path);

    const SegmentDataset full = detail::build_dataset(cfg, detail::load_inputs(cfg));
    SegmentDataset chosen;
    if (split_name == "train")
        chosen = split_by_repetition(full, cfg.train_reps, cfg.test_reps).train;
    else if (split_name == "test")
        chosen = split_by_repetition(full, cfg.train_reps, cfg.test_reps).test;
    else if (split_name == "all")
        chosen = full;  // segmentation already excludes rest
    else
        throw ConfigError("evaluate split must be 'train', 'test', or 'all', not '" + split_name +
                          "'");
    if (chosen.empty())
        throw ContractError("evaluate: the '" + split_name + "' split holds no windows");
    detail::check_window_match(net.config, chosen);

    const std::vector<detail::SubjectReport> by_subject = detail::evaluate_by_subject(net, chosen);

    // Pool by summation; window order inside subjects never matters here.
    const std::size_t c = static_cast<std::size_t>(net.config.n_classes);
    EvalReport pooled;
    pooled.confusion.assign(c, std::vector<std::uint64_t>(c, 0));
    pooled.class_support.assign(c, 0);
    std::uint64_t correct = 0;
    for (const auto& sr : by_subject) {
        pooled.total += sr.report.total;
        for (std::size_t i = 0; i < c; ++i) {
            pooled.class_support[i] += sr.report.class_support[i];
            for (std::size_t j = 0; j < c; ++j) pooled.confusion[i][j] += sr.report.confusion[i][j];
        }
    }
    for (std::size_t i = 0; i < c; ++i) correct += pooled.confusion[i][i];
    pooled.accuracy =
        pooled.total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(pooled.total);
    pooled.per_class_recall.assign(c, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < c; ++i)
        if (pooled.class_support[i] > 0)
            pooled.per_class_recall[i] = static_cast<double>(pooled.confusion[i][i]) /
                                         static_cast<double>(pooled.class_support[i]);

    nlohmann::json report;
    report["tool_version"] = kToolVersion;
    report["split"] = split_name;
    // basename only: reports must not vary with the directory they ran from
    report["checkpoint"] = std::filesystem::path(checkpoint_path).filename().string();
    report["n_classes"] = net.config.n_classes;
    report["window_samples"] = chosen.window_samples;
    report["total_windows"] = pooled.total;
    report["accuracy"] = pooled.accuracy;
    report["per_class_recall"] = pooled.per_class_recall;
    report["class_support"] = pooled.class_support;
    report["subjects"] = nlohmann::json::array();
    for (const auto& sr : by_subject) {
        nlohmann::json s;
        s["subject"] = sr.subject;
        s["windows"] = sr.report.total;
        s["accuracy"] = sr.report.accuracy;
        report["subjects"].push_back(std::move(s));
    }

    const std::string prefix = "eval_" + split_name;
    EvaluateOutputs out;
    out.report_path = detail::join_path(cfg.run_dir, prefix + "_report.json");
    detail::write_text_file(out.report_path, report.dump(2) + "\n");

    std::string confusion = "true";
    for (std::size_t j = 0; j < c; ++j) confusion += ",pred_" + std::to_string(j + 1);
    confusion += '\n';
    for (std::size_t i = 0; i < c; ++i) {
        confusion += std::to_string(i + 1);
        for (std::size_t j = 0; j < c; ++j) confusion += ',' + std::to_string(pooled.confusion[i][j]);
        confusion += '\n';
    }
    out.confusion_path = detail::join_path(cfg.run_dir, prefix + "_confusion.csv");
    detail::write_text_file(out.confusion_path, confusion);

    std::string preds = "subject,label,repetition,start,prediction\n";
    for (const auto& sr : by_subject) {
        std::size_t k = 0;
        for (const Window& w : chosen.windows) {
            if (w.subject != sr.subject) continue;
            preds += std::to_string(w.subject) + ',' + std::to_string(w.label) + ',' +
                     std::to_string(w.repetition) + ',' + std::to_string(w.start) + ',' +
                     std::to_string(sr.report.predictions[k++]) + '\n';
        }
    }
    out.predictions_path = detail::join_path(cfg.run_dir, prefix + "_predictions.csv");
    detail::write_text_file(out.predictions_path, preds);

    detail::write_manifest(
        cfg, "evaluate",
        {{"files", {out.report_path, out.confusion_path, out.predictions_path}},
         {"split", split_name},
         {"accuracy", pooled.accuracy}},
        timer.seconds());
    out.pooled = std::move(pooled);
    return out;
}

// ---------------------------------------------------------------------------
// compare: cohort statistics and pairwise signed-rank tests over reports
// ---------------------------------------------------------------------------

namespace detail {

struct CohortAccuracies {
    std::string path;
    std::vector<std::uint32_t> subjects;
    std::vector<double> accuracy;
};

inline CohortAccuracies load_report_accuracies(const std::string& path) {
    const nlohmann::json j = load_json_file(path);
    if (!j.contains("subjects") || !j.at("subjects").is_array())
        throw FormatError(path + ": not an evaluation report (missing 'subjects')");
    CohortAccuracies out;
    out.path = path;
    for (const auto& s : j.at("subjects")) {
        try {
            out.subjects.push_back(s.at("subject").get<std::uint32_t>());
            out.accuracy.push_back(s.at("accuracy").get<double>());
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path + ": malformed subject entry: " + e.what());
        }
    }
    if (out.subjects.empty()) throw FormatError(path + ": report lists no subjects");
    return out;
}

}  // namespace detail

struct CompareOutputs {
    std::string cohorts_path;
    std::string comparisons_path;
};

inline CompareOutputs cmd_compare(const RunConfig& cfg,
                                  const std::vector<std::string>& report_paths) {
    detail::CommandTimer timer;
    detail::ensure_run_dir(cfg);
    if (report_paths.size() < 2)
        throw ContractError("compare needs at least two evaluation reports");

    std::vector<detail::CohortAccuracies> cohorts;
    cohorts.reserve(report_paths.size());
    for (const std::string& p : report_paths) cohorts.push_back(detail::load_report_accuracies(p));

    std::string cohort_csv =
        "report,n,mean,stddev,q1,median,q3,iqr,min,max\n";
    for (const auto& c : cohorts) {
        const CohortSummary s = aggregate_subjects(c.accuracy);
        cohort_csv += c.path + ',' + std::to_string(s.values.size()) + ',' +
                      format_double(s.mean) + ',' +
                      (s.std_defined ? format_double(s.stddev) : std::string("nan")) + ',' +
                      format_double(s.q1) + ',' + format_double(s.median) + ',' +
                      format_double(s.q3) + ',' + format_double(s.iqr) + ',' +
                      format_double(s.min_value) + ',' + format_double(s.max_value) + '\n';
    }

    std::string cmp_csv = "report_a,report_b,n_used,w_plus,w_minus,p,mode,band\n";
    for (std::size_t a = 0; a < cohorts.size(); ++a) {
        for (std::size_t b = a + 1; b < cohorts.size(); ++b) {
            if (cohorts[a].subjects != cohorts[b].subjects)
                throw ContractError("compare: " + cohorts[a].path + " and " + cohorts[b].path +
                                    " cover different subject sets; the test needs paired "
                                    "observations");
            const WilcoxonResult w = wilcoxon_signed_rank(cohorts[a].accuracy, cohorts[b].accuracy);
            cmp_csv += cohorts[a].path + ',' + cohorts[b].path + ',' +
                       std::to_string(w.n_used) + ',' + format_double(w.w_plus) + ',' +
                       format_double(w.w_minus) + ',' + format_double(w.p) + ',' +
                       (w.exact ? "exact" : "normal") + ',' + w.band + '\n';
        }
    }

    CompareOutputs out;
    out.cohorts_path = detail::join_path(cfg.run_dir, "cohorts.csv");
    detail::write_text_file(out.cohorts_path, cohort_csv);
    out.comparisons_path = detail::join_path(cfg.run_dir, "comparisons.csv");
    detail::write_text_file(out.comparisons_path, cmp_csv);
    detail::write_manifest(cfg, "compare",
                           {{"files", {out.cohorts_path, out.comparisons_path}},
                            {"reports", report_paths}},
                           timer.seconds());
    return out;
}

// ---------------------------------------------------------------------------
// possim: positional-embedding cosine-similarity matrix
// ---------------------------------------------------------------------------

struct PossimOutputs {
    std::string matrix_path;
    std::string meta_path;
};

inline PossimOutputs cmd_possim(const RunConfig& cfg, const std::string& checkpoint_path) {
    detail::CommandTimer timer;
    detail::ensure_run_dir(cfg);
    const TemgNet net = load_checkpoint(checkpoint_path);
    const SimilarityMatrix sim = pos_embedding_similarity(net.pos_table);

    const std::size_t n = sim.size();
    std::string csv;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (j) csv += ',';
            csv += format_double(sim.values[i][j]);
        }
        csv += '\n';
    }

    nlohmann::json meta;
    meta["tool_version"] = kToolVersion;
    meta["checkpoint"] = std::filesystem::path(checkpoint_path).filename().string();
    meta["rows"] = n;
    meta["zero_rows"] = nlohmann::json::array();
    for (std::size_t i = 0; i < n; ++i)
        if (sim.zero_row[i]) meta["zero_rows"].push_back(i);

    PossimOutputs out;
    out.matrix_path = detail::join_path(cfg.run_dir, "possim.csv");
    detail::write_text_file(out.matrix_path, csv);
    out.meta_path = detail::join_path(cfg.run_dir, "possim_meta.json");
    detail::write_text_file(out.meta_path, meta.dump(2) + "\n");
    detail::write_manifest(cfg, "possim", {{"files", {out.matrix_path, out.meta_path}}},
                           timer.seconds());
    return out;
}

}  // namespace temgnet
