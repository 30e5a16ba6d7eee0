#pragma once

#include <cstdint>
#include <string>

#include "biasfix/config.hpp"

namespace biasfix::stages {

// Shared command-line surface of every subcommand.
struct Options {
    std::string config_path;  // empty: all defaults
    std::string out_dir;      // overrides config when nonempty
    bool has_seed = false;
    std::uint64_t seed = 0;
    int jobs = 1;
    bool force = false;  // accept a differently-hashed fallback artifact
};

// Options applied on top of the parsed file.
config::PipelineConfig resolve_config(const Options& opt);

// Artifact path <out>/<stage>.<hash8>.<ext>.
std::string artifact_path(const config::PipelineConfig& cfg, const std::string& stage,
                          const std::string& ext);

// Stage entry points; each reads its inputs from the output directory and
// persists its own artifacts. Return value is the process exit code: 0 ok,
// 2 missing artifact, 3 config error, 4 numerical failure.
int cmd_gen(const Options& opt);
int cmd_train(const Options& opt);
int cmd_score(const Options& opt);
int cmd_pivotal(const Options& opt);
int cmd_finetune(const Options& opt);
int cmd_eval(const Options& opt);

// gen -> train -> pivotal -> finetune -> eval, then a summary table
// (ERM acc, fine-tuned acc, pivotal precision, |Z_P|) on stdout.
int cmd_pipeline(const Options& opt);

}  // namespace biasfix::stages
