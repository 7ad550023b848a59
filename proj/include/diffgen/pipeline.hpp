#pragma once

#include <optional>
#include <string>

#include "diffgen/config.hpp"

namespace diffgen {

/// Resolved experiment context shared by all stages. Relative data and
/// output paths resolve against the output root so a single --out flag
/// relocates a whole run.
struct PipelineContext {
    Config cfg;
    std::filesystem::path out;
    std::uint64_t seed = 0;

    std::filesystem::path data_root() const;
    std::string dataset_name() const;
    std::filesystem::path stage_marker(const std::string& stage) const;
};

PipelineContext make_context(const Config& cfg, const std::filesystem::path& out_override,
                             std::optional<std::uint64_t> seed_override);

void stage_toy_data(PipelineContext& ctx);
void stage_split(PipelineContext& ctx, std::optional<double> fraction_override = {});
void stage_train_dm(PipelineContext& ctx);
void stage_generate(PipelineContext& ctx);
void stage_train_cnn(PipelineContext& ctx);
void stage_evaluate(PipelineContext& ctx);
void stage_explain(PipelineContext& ctx);
void stage_report(PipelineContext& ctx);

/// Run one named stage (dependency errors name the stage to run first).
void run_stage(PipelineContext& ctx, const std::string& stage);

/// All stages in order, skipping stages whose completion marker matches the
/// current config fingerprint and seed; only_stage restricts to one stage.
void run_pipeline(PipelineContext& ctx, const std::string& only_stage = "");

}  // namespace diffgen
