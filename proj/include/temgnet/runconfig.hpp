#pragma once

// Declarative run configuration: one structured-text file drives the
// whole pipeline. Parsing is strict; an unrecognized key is an error
// rather than a silently ignored typo.

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "temgnet/dataio.hpp"
#include "temgnet/errors.hpp"
#include "temgnet/model.hpp"
#include "temgnet/segmentation.hpp"
#include "temgnet/sigproc.hpp"
#include "temgnet/training.hpp"

namespace temgnet {

struct RunConfig {
    std::string run_dir;               // output directory; required by every command
    std::vector<std::string> inputs;   // recording files; required where data is read
    std::vector<std::uint32_t> subjects;  // optional per-input subject override

    FilterSpec filter;
    double mu = kDefaultMu;
    double window_ms = 300.0;
    double step_ms = 100.0;
    LabelPolicy policy = LabelPolicy::Pure;
    std::set<int> train_reps = default_train_reps();
    std::set<int> test_reps = default_test_reps();

    // model_id 0 means the explicit fields below apply instead of a
    // standard variant
    int model_id = 1;
    ModelConfig model = table_config(1, 300);
    std::string label_source = "refined";  // recorded in run metadata only

    TrainConfig train;
    std::uint64_t init_seed = 0;

    SynthSpec synth;
    int synth_subjects = 1;
};

namespace detail {

// Tracks which keys of one JSON object were consumed so the leftovers
// can be reported by full path.
class StrictView {
public:
    StrictView(nlohmann::json j, std::string path) : j_(std::move(j)), path_(std::move(path)) {
        if (!j_.is_object())
            throw ConfigError("config section '" + path_ + "' must be an object");
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key);
    }

    template <typename T>
    void get(const std::string& key, T& target) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            j_.at(key).get_to(target);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config key '" + full(key) + "': " + e.what());
        }
    }

    nlohmann::json section(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key) ? j_.at(key) : nlohmann::json::object();
    }

    std::string full(const std::string& key) const {
        return path_.empty() ? key : path_ + "." + key;
    }

    // every remaining key is a typo by contract
    void finish() const {
        for (const auto& item : j_.items())
            if (!seen_.count(item.key()))
                throw ConfigError("unknown config key '" + full(item.key()) + "'");
    }

private:
    nlohmann::json j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline std::set<int> int_set(const nlohmann::json& j, const std::string& path) {
    if (!j.is_array()) throw ConfigError("config key '" + path + "' must be an array");
    std::set<int> out;
    for (const auto& v : j) {
        if (!v.is_number_integer())
            throw ConfigError("config key '" + path + "' must hold integers");
        out.insert(v.get<int>());
    }
    return out;
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& root) {
    RunConfig cfg;
    detail::StrictView top(root, "");

    top.get("run_dir", cfg.run_dir);
    top.get("inputs", cfg.inputs);
    top.get("subjects", cfg.subjects);
    top.get("label_source", cfg.label_source);
    if (cfg.label_source != "refined" && cfg.label_source != "raw")
        throw ConfigError("config key 'label_source' must be 'refined' or 'raw'");

    {
        detail::StrictView f(top.section("filter"), "filter");
        f.get("order", cfg.filter.order);
        f.get("cutoff_hz", cfg.filter.cutoff_hz);
        f.get("sample_rate_hz", cfg.filter.sample_rate_hz);
        f.get("zero_phase", cfg.filter.zero_phase);
        f.finish();
        cfg.filter.validate();
    }
    top.get("mu", cfg.mu);
    if (cfg.mu <= 0.0) throw ConfigError("config key 'mu' must be positive");

    {
        detail::StrictView w(top.section("window"), "window");
        w.get("ms", cfg.window_ms);
        w.get("step_ms", cfg.step_ms);
        std::string policy = "pure";
        w.get("policy", policy);
        if (policy == "pure")
            cfg.policy = LabelPolicy::Pure;
        else if (policy == "majority")
            cfg.policy = LabelPolicy::Majority;
        else
            throw ConfigError("config key 'window.policy' must be 'pure' or 'majority'");
        w.finish();
        if (cfg.window_ms <= 0.0 || cfg.step_ms <= 0.0)
            throw ConfigError("window.ms and window.step_ms must be positive");
    }

    {
        detail::StrictView s(top.section("split"), "split");
        if (s.has("train_reps"))
            cfg.train_reps = detail::int_set(s.section("train_reps"), "split.train_reps");
        if (s.has("test_reps"))
            cfg.test_reps = detail::int_set(s.section("test_reps"), "split.test_reps");
        s.finish();
    }

    {
        detail::StrictView m(top.section("model"), "model");
        const bool has_id = m.has("model_id");
        const bool has_explicit =
            m.has("layers") || m.has("dim") || m.has("mlp_size") || m.has("heads");
        if (has_id && has_explicit)
            throw ConfigError(
                "config section 'model' must use either model_id or explicit "
                "layers/dim/mlp_size/heads, not both");
        if (has_id) {
            m.get("model_id", cfg.model_id);
            int window_ms_int = static_cast<int>(cfg.window_ms);
            if (m.has("window_ms")) m.get("window_ms", window_ms_int);
            cfg.model = table_config(cfg.model_id, window_ms_int);
        } else {
            if (has_explicit) cfg.model_id = 0;
            m.get("layers", cfg.model.layers);
            m.get("dim", cfg.model.dim);
            m.get("mlp_size", cfg.model.mlp_size);
            m.get("heads", cfg.model.heads);
            // without dims the standard variant keeps its table entry but
            // follows the configured window length
            cfg.model.window_samples =
                detail::ms_to_samples(cfg.window_ms, cfg.filter.sample_rate_hz);
            m.get("window_samples", cfg.model.window_samples);
            if (m.has("window_ms")) {
                int window_ms_int = 0;
                m.get("window_ms", window_ms_int);
                cfg.model.window_samples = detail::ms_to_samples(
                    static_cast<double>(window_ms_int), cfg.filter.sample_rate_hz);
            }
        }
        m.get("patch_side", cfg.model.patch_side);
        m.get("n_classes", cfg.model.n_classes);
        m.get("dropout_rate", cfg.model.dropout_rate);
        m.finish();
    }

    {
        detail::StrictView t(top.section("train"), "train");
        t.get("learning_rate", cfg.train.learning_rate);
        t.get("beta1", cfg.train.beta1);
        t.get("beta2", cfg.train.beta2);
        t.get("eps", cfg.train.eps);
        t.get("weight_decay", cfg.train.weight_decay);
        t.get("decoupled_decay", cfg.train.decoupled_decay);
        t.get("batch_size", cfg.train.batch_size);
        t.get("epochs", cfg.train.epochs);
        t.get("early_stop_train_accuracy", cfg.train.early_stop_train_accuracy);
        t.finish();
        cfg.train.validate();
    }

    {
        detail::StrictView s(top.section("seeds"), "seeds");
        s.get("init", cfg.init_seed);
        s.get("shuffle", cfg.train.shuffle_seed);
        s.finish();
    }

    {
        detail::StrictView s(top.section("synth"), "synth");
        s.get("n_classes", cfg.synth.n_classes);
        s.get("repetitions", cfg.synth.repetitions);
        s.get("movement_seconds", cfg.synth.movement_seconds);
        s.get("rest_seconds", cfg.synth.rest_seconds);
        s.get("sample_rate_hz", cfg.synth.sample_rate_hz);
        s.get("noise_level", cfg.synth.noise_level);
        s.get("seed", cfg.synth.seed);
        s.get("subjects", cfg.synth_subjects);
        s.finish();
        if (cfg.synth_subjects < 1)
            throw ConfigError("config key 'synth.subjects' must be at least 1");
    }

    top.finish();

    if (!cfg.subjects.empty() && cfg.subjects.size() != cfg.inputs.size())
        throw ConfigError("config key 'subjects' must align with 'inputs' (" +
                          std::to_string(cfg.subjects.size()) + " against " +
                          std::to_string(cfg.inputs.size()) + ")");
    for (int r : cfg.train_reps)
        if (cfg.test_reps.count(r))
            throw ConfigError("repetition " + std::to_string(r) +
                              " appears in both split.train_reps and split.test_reps");
    return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingInputError("cannot open config " + path);
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": config parse error: " + e.what());
    }
    return parse_run_config(root);
}

// The resolved configuration, echoed into run metadata so every default
// in effect is recorded.
inline nlohmann::json config_echo(const RunConfig& cfg) {
    nlohmann::json j;
    j["run_dir"] = cfg.run_dir;
    j["inputs"] = cfg.inputs;
    j["subjects"] = cfg.subjects;
    j["label_source"] = cfg.label_source;
    j["filter"] = {{"order", cfg.filter.order},
                   {"cutoff_hz", cfg.filter.cutoff_hz},
                   {"sample_rate_hz", cfg.filter.sample_rate_hz},
                   {"zero_phase", cfg.filter.zero_phase}};
    j["mu"] = cfg.mu;
    j["window"] = {{"ms", cfg.window_ms},
                   {"step_ms", cfg.step_ms},
                   {"policy", cfg.policy == LabelPolicy::Pure ? "pure" : "majority"}};
    j["split"] = {{"train_reps", cfg.train_reps}, {"test_reps", cfg.test_reps}};
    // The echo must itself parse, so a model is written either as its
    // table id or as explicit dims, never both.
    nlohmann::json model;
    bool as_table = false;
    if (cfg.model_id != 0 &&
        (cfg.model.window_samples == 400 || cfg.model.window_samples == 600)) {
        const int wm = cfg.model.window_samples == 400 ? 200 : 300;
        const ModelConfig t = table_config(cfg.model_id, wm);
        as_table = t.layers == cfg.model.layers && t.dim == cfg.model.dim &&
                   t.mlp_size == cfg.model.mlp_size && t.heads == cfg.model.heads;
        if (as_table) model = {{"model_id", cfg.model_id}, {"window_ms", wm}};
    }
    if (!as_table)
        model = {{"layers", cfg.model.layers},
                 {"dim", cfg.model.dim},
                 {"mlp_size", cfg.model.mlp_size},
                 {"heads", cfg.model.heads},
                 {"window_samples", cfg.model.window_samples}};
    model["patch_side"] = cfg.model.patch_side;
    model["n_classes"] = cfg.model.n_classes;
    model["dropout_rate"] = cfg.model.dropout_rate;
    j["model"] = std::move(model);
    j["train"] = {{"learning_rate", cfg.train.learning_rate},
                  {"beta1", cfg.train.beta1},
                  {"beta2", cfg.train.beta2},
                  {"eps", cfg.train.eps},
                  {"weight_decay", cfg.train.weight_decay},
                  {"decoupled_decay", cfg.train.decoupled_decay},
                  {"batch_size", cfg.train.batch_size},
                  {"epochs", cfg.train.epochs},
                  {"early_stop_train_accuracy", cfg.train.early_stop_train_accuracy}};
    j["seeds"] = {{"init", cfg.init_seed}, {"shuffle", cfg.train.shuffle_seed}};
    j["synth"] = {{"n_classes", cfg.synth.n_classes},
                  {"repetitions", cfg.synth.repetitions},
                  {"movement_seconds", cfg.synth.movement_seconds},
                  {"rest_seconds", cfg.synth.rest_seconds},
                  {"sample_rate_hz", cfg.synth.sample_rate_hz},
                  {"noise_level", cfg.synth.noise_level},
                  {"seed", cfg.synth.seed},
                  {"subjects", cfg.synth_subjects}};
    return j;
}

}  // namespace temgnet
