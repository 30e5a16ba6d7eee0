#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "biasfix/dataset.hpp"
#include "biasfix/mlp.hpp"
#include "biasfix/selection.hpp"

namespace biasfix::finetune {

struct FineTuneConfig {
    double lambda = 0.1;  // counterweight on the remaining set
    int n_iter = 100;
    double lr = 1e-3;
    double lr_final_factor = 1e-3;  // cosine-annealed down to lr * this
    double weight_decay = 1e-4;     // decoupled
    bool reinit_last_layer = true;
    std::uint64_t seed = 0;
    int full_batch_cap = 4096;  // chunk size for the pivotal-set gradient
    nn::AdamParams adam;
};

// Learning rate at iteration i of n (cosine annealing, endpoints exact).
double cosine_lr(const FineTuneConfig& cfg, int iter);

struct FineTuneTraceRow {
    int iter = 0;
    double lr = 0.0;
    double loss_pivotal = 0.0;
    double loss_remain = 0.0;
    double loss_total = 0.0;
};

struct FineTuneResult {
    nn::MlpParams params;
    std::vector<FineTuneTraceRow> trace;
    std::string warning;  // e.g. empty remaining set
};

// Last layer re-drawn with the init_mlp scheme, other layers untouched.
nn::MlpParams reinit_last_layer(const nn::MlpParams& params, std::uint64_t seed);

// Counterweight fine-tuning: per iteration, full-batch mean CE over the
// pivotal set plus lambda * mean CE over |pivotal| draws (uniform, with
// replacement) from the remaining samples; one Adam step per iteration under
// the cosine schedule, all parameters updated, optimizer state fresh.
FineTuneResult finetune(const nn::MlpParams& params, const datagen::BiasedDataset& ds_train,
                        const selection::PivotalSet& pivotal, const FineTuneConfig& cfg);

// CSV: iter,lr,loss_pivotal,loss_remain,loss_total
void write_trace_csv(const std::vector<FineTuneTraceRow>& trace, std::ostream& out);
void write_trace_csv(const std::vector<FineTuneTraceRow>& trace, const std::string& path);

}  // namespace biasfix::finetune
