// temgnet: train and evaluate window-level sEMG gesture classifiers.
//
// Every subcommand is driven by one JSON run configuration (--config)
// plus a handful of per-command flags. Exit codes: 0 success, 2 missing
// input, 3 runtime/data error, 4 bad configuration or usage, 5 internal
// error.

#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "temgnet/pipeline.hpp"

namespace {

temgnet::RunConfig load_config_or_die(const std::string& path) {
    if (path.empty()) throw temgnet::ConfigError("--config is required for this command");
    return temgnet::load_run_config(path);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"window-level sEMG gesture classification pipeline"};
    app.set_version_flag("--version", std::string("temgnet ") + temgnet::kToolVersion);
    app.require_subcommand(1);

    std::string config_path;
    app.add_option("--config,-c", config_path, "JSON run configuration")->expected(1);

    auto* synth = app.add_subcommand("synth", "generate labeled surrogate recordings");
    auto* preprocess =
        app.add_subcommand("preprocess", "filter, scale, and compress raw recordings");
    auto* segment = app.add_subcommand("segment", "write the window inventory");
    auto* train = app.add_subcommand("train", "train a classifier on the train repetitions");

    std::string checkpoint_path;
    std::string split_name = "test";
    auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint on a repetition split");
    evaluate->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    evaluate->add_option("--split", split_name, "train, test, or all");

    std::vector<std::string> report_paths;
    auto* compare = app.add_subcommand("compare", "signed-rank tests across evaluation reports");
    compare->add_option("reports", report_paths, "evaluation report JSON files")->expected(-1);

    std::string possim_checkpoint;
    auto* possim =
        app.add_subcommand("possim", "positional-embedding similarity matrix of a checkpoint");
    possim->add_option("--checkpoint", possim_checkpoint, "checkpoint file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            const auto outputs = temgnet::cmd_synth(load_config_or_die(config_path));
            for (const auto& p : outputs) std::cout << p << '\n';
        } else if (preprocess->parsed()) {
            const auto outputs = temgnet::cmd_preprocess(load_config_or_die(config_path));
            for (const auto& p : outputs) std::cout << p << '\n';
        } else if (segment->parsed()) {
            std::cout << temgnet::cmd_segment(load_config_or_die(config_path)) << '\n';
        } else if (train->parsed()) {
            const auto out = temgnet::cmd_train(load_config_or_die(config_path));
            std::cout << out.checkpoint_path << '\n' << out.best_checkpoint_path << '\n';
            if (!out.result.trace.empty())
                std::cout << "final train accuracy "
                          << temgnet::format_double(out.result.trace.back().train_accuracy)
                          << '\n';
        } else if (evaluate->parsed()) {
            const auto out =
                temgnet::cmd_evaluate(load_config_or_die(config_path), checkpoint_path, split_name);
            std::cout << out.report_path << '\n'
                      << "accuracy " << temgnet::format_double(out.pooled.accuracy) << '\n';
        } else if (compare->parsed()) {
            const auto out = temgnet::cmd_compare(load_config_or_die(config_path), report_paths);
            std::cout << out.cohorts_path << '\n' << out.comparisons_path << '\n';
        } else if (possim->parsed()) {
            const auto out =
                temgnet::cmd_possim(load_config_or_die(config_path), possim_checkpoint);
            std::cout << out.matrix_path << '\n';
        }
    } catch (const temgnet::MissingInputError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const temgnet::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    } catch (const temgnet::InternalError& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 5;
    } catch (const temgnet::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 5;
    }
    return 0;
}
