#include "leak/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

namespace pl = leak::pipeline;

namespace {

std::optional<std::filesystem::path> opt_path(const std::string& value, bool present) {
    if (!present) return std::nullopt;
    return std::filesystem::path(value);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Coarse-to-fine self-regularized point segmentation pipeline"};
    app.require_subcommand(1);

    std::string spec_file;
    std::string out_dir;
    double train_fraction = 0.75;
    auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset and split it");
    gen->add_option("--spec", spec_file, "dataset spec (JSON)")->required();
    gen->add_option("--out", out_dir, "experiment directory")->required();
    gen->add_option("--train-fraction", train_fraction, "share of scenes in the train split")
        ->capture_default_str();

    std::string config_file;
    std::string hierarchy_arg;
    double lambda_pm = 0.0, lambda_pM = 0.0, lambda_f = 0.0;
    std::uint64_t seed = 0;
    auto* train = app.add_subcommand(
        "train", "Train the baseline model, or the regularized one when --hierarchy is given");
    train->add_option("--config", config_file, "training config (JSON)")->required();
    train->add_option("--out", out_dir, "experiment directory")->required();
    train->add_option("--hierarchy", hierarchy_arg,
                      "hierarchy JSON; no value selects the experiment's mined one")
        ->expected(0, 1);
    train->add_option("--lambda-pm", lambda_pm, "override the per-class prototype loss weight");
    train->add_option("--lambda-pM", lambda_pM, "override the grouped prototype loss weight");
    train->add_option("--lambda-f", lambda_f, "override the fairness loss weight");
    train->add_option("--seed", seed, "override the config seed");

    std::string checkpoint_file;
    std::string val_file;
    std::uint64_t cluster_seed = 0x5EED;
    auto* cluster = app.add_subcommand(
        "cluster", "Mine the class hierarchy from the baseline model's validation confusions");
    cluster->add_option("--out", out_dir, "experiment directory")->required();
    cluster->add_option("--checkpoint", checkpoint_file, "checkpoint override");
    cluster->add_option("--val", val_file, "validation split override");
    cluster->add_option("--seed", cluster_seed, "clustering seed")->capture_default_str();

    std::string data_file;
    std::string eval_out;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset file");
    eval->add_option("--checkpoint", checkpoint_file, "model checkpoint")->required();
    eval->add_option("--data", data_file, "dataset file")->required();
    eval->add_option("--hierarchy", hierarchy_arg, "hierarchy JSON for the grouped metrics");
    eval->add_option("--out", eval_out, "write the report JSON here");

    std::string baseline_log;
    std::string leak_log;
    auto* report =
        app.add_subcommand("report", "Compare the baseline and regularized training logs");
    report->add_option("--out", out_dir, "experiment directory")->required();
    report->add_option("--baseline-log", baseline_log, "baseline log override");
    report->add_option("--leak-log", leak_log, "regularized log override");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (gen->parsed()) {
            pl::run_gen_data(spec_file, out_dir, train_fraction);
            std::cout << "dataset ready under " << out_dir << "\n";
        } else if (train->parsed()) {
            pl::TrainOverrides overrides;
            if (train->count("--lambda-pm") > 0) overrides.lambda_pm = lambda_pm;
            if (train->count("--lambda-pM") > 0) overrides.lambda_pM = lambda_pM;
            if (train->count("--lambda-f") > 0) overrides.lambda_f = lambda_f;
            if (train->count("--seed") > 0) overrides.seed = seed;
            const auto checkpoint =
                pl::run_train(config_file, out_dir,
                              opt_path(hierarchy_arg, train->count("--hierarchy") > 0), overrides);
            std::cout << "checkpoint written: " << checkpoint.string() << "\n";
        } else if (cluster->parsed()) {
            const auto h = pl::run_cluster(
                out_dir, opt_path(checkpoint_file, cluster->count("--checkpoint") > 0),
                opt_path(val_file, cluster->count("--val") > 0), cluster_seed);
            std::cout << "hierarchy with " << h.macro_count << " groups written under " << out_dir
                      << "\n";
        } else if (eval->parsed()) {
            const auto report_json =
                pl::run_eval(checkpoint_file, data_file,
                             opt_path(hierarchy_arg, eval->count("--hierarchy") > 0),
                             opt_path(eval_out, eval->count("--out") > 0));
            std::cout << report_json.to_json() << "\n";
        } else if (report->parsed()) {
            const std::string text =
                pl::run_report(out_dir, opt_path(baseline_log, report->count("--baseline-log") > 0),
                               opt_path(leak_log, report->count("--leak-log") > 0));
            std::cout << text;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
