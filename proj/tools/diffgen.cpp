// Command-line front end for the synthetic-data experiment pipeline:
// toy-data | split | train-dm | generate | train-cnn | evaluate | explain |
// report | pipeline. Every stage reads one key-value config document and
// writes its outputs (plus a resumable completion marker) under --out.

#include <CLI11.hpp>
#include <iostream>
#include <optional>

#include "diffgen/pipeline.hpp"

int main(int argc, char** argv) {
    CLI::App app{"diffusion-based synthetic data pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<double> fraction;
    std::string only_stage;

    app.add_option("--config", config_path, "experiment config file")->required();
    app.add_option("--seed", seed, "override the config seed");
    app.add_option("--out", out_dir, "override the output root");

    auto* toy = app.add_subcommand("toy-data", "render the procedural toy corpus");
    auto* split = app.add_subcommand("split", "stratified sample into dm_train / holdout_test");
    split->add_option("--fraction", fraction, "override data.sample_fraction");
    auto* train_dm = app.add_subcommand("train-dm", "train the diffusion model(s)");
    auto* generate = app.add_subcommand("generate", "sample the synthetic dataset");
    auto* train_cnn = app.add_subcommand("train-cnn", "k-fold classifier training on synthetic data");
    auto* evaluate = app.add_subcommand("evaluate", "score the best classifier on the untouched holdout");
    auto* explain = app.add_subcommand("explain", "local surrogate explanations for holdout predictions");
    auto* report = app.add_subcommand("report", "emit the summary report CSV");
    auto* pipeline = app.add_subcommand("pipeline", "run all stages in order");
    pipeline->add_option("--stage", only_stage, "run a single pipeline stage");

    CLI11_PARSE(app, argc, argv);

    try {
        diffgen::Config cfg = diffgen::Config::parse_file(config_path);
        diffgen::PipelineContext ctx = diffgen::make_context(cfg, out_dir, seed);

        if (toy->parsed())
            diffgen::stage_toy_data(ctx);
        else if (split->parsed())
            diffgen::stage_split(ctx, fraction);
        else if (train_dm->parsed())
            diffgen::stage_train_dm(ctx);
        else if (generate->parsed())
            diffgen::stage_generate(ctx);
        else if (train_cnn->parsed())
            diffgen::stage_train_cnn(ctx);
        else if (evaluate->parsed())
            diffgen::stage_evaluate(ctx);
        else if (explain->parsed())
            diffgen::stage_explain(ctx);
        else if (report->parsed())
            diffgen::stage_report(ctx);
        else if (pipeline->parsed())
            diffgen::run_pipeline(ctx, only_stage);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
