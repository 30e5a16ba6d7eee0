#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "biasfix/dataset.hpp"
#include "biasfix/finetune.hpp"
#include "biasfix/influence.hpp"
#include "biasfix/mlp.hpp"
#include "biasfix/selection.hpp"

namespace biasfix::eval {

struct EvalReport {
    double unbiased_acc = 0.0;
    double aligned_acc = 0.0;      // NaN when the group is empty
    double conflicting_acc = 0.0;  // NaN when the group is empty
    double worst_group_acc = 0.0;  // min over nonempty (label, bias) cells
    std::map<std::pair<int, int>, double> group_acc;
};

// Accuracy summary on a held-out set (final-epoch model, no selection).
EvalReport evaluate_model(const nn::MlpParams& params, const datagen::BiasedDataset& test_ds);

// Seed-averaged detection precision of one scoring method.
struct MethodPrecision {
    influence::ScoreMethod method = influence::ScoreMethod::Bcsi;
    std::vector<double> per_seed;
    double mean = 0.0;
    double std_error = 0.0;  // sample std / sqrt(n), 0 for a single seed
    selection::PrecisionDenominator denominator = selection::PrecisionDenominator::SelectedSize;
};

double mean_of(const std::vector<double>& xs);
double std_error_of(const std::vector<double>& xs);

struct CompareConfig {
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    influence::BcsiConfig bcsi;  // early-epoch GCE scorer
    influence::SiConfig si;      // convergence model for Loss/GradNorm/SI/IFTrain
    int jobs = 1;
};

// Detection precision per method: every train sample ranked, the top
// ground-truth-count taken, precision = conflicting fraction of that cut.
// Order: Loss, GradNorm, SelfInfluence, IfTrain, Bcsi.
std::vector<MethodPrecision> compare_detectors(const datagen::BiasedDataset& ds,
                                               const std::vector<int>& dims,
                                               const CompareConfig& cfg);

// SI and IF_train precision as the scored checkpoint moves to later epochs.
struct EpochPrecision {
    int epoch = 0;
    MethodPrecision si;
    MethodPrecision if_train;
};

std::vector<EpochPrecision> precision_vs_epoch(const datagen::BiasedDataset& ds,
                                               const std::vector<int>& dims,
                                               const std::vector<int>& epochs_list,
                                               const CompareConfig& cfg);

// Equal-width score histogram split by ground-truth group; the top edge is
// closed. Degenerate spread (min == max) puts everything in bin 0.
struct Histogram {
    std::vector<double> edges;                // bins + 1
    std::vector<std::int64_t> aligned;        // bins
    std::vector<std::int64_t> conflicting;    // bins
};

Histogram score_histogram(const std::vector<influence::InfluenceRecord>& records,
                          const datagen::BiasedDataset& ds, int bins);

// CSV: bin_lo,bin_hi,aligned_count,conflicting_count
void write_histogram_csv(const Histogram& hist, std::ostream& out);
void write_histogram_csv(const Histogram& hist, const std::string& path);

// One full pipeline cell: generate -> ERM -> pivotal -> finetune -> accuracy.
struct SweepConfig {
    datagen::GenConfig gen;            // conflict_ratio overridden per row
    std::vector<int> hidden_dims = {100, 100};
    nn::TrainConfig erm;
    influence::BcsiConfig bcsi;
    int k = 100;
    int num_runs = 3;
    finetune::FineTuneConfig ft;
    std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
    int test_per_class = 200;
    int jobs = 1;
};

struct SweepRow {
    double r = 0.0;
    double erm_mean = 0.0;
    double erm_std_error = 0.0;
    double finetuned_mean = 0.0;
    double finetuned_std_error = 0.0;
    double pivotal_precision_mean = 0.0;
    double pivotal_size_mean = 0.0;
};

// ERM vs fine-tuned unbiased test accuracy across bias-conflicting ratios,
// seed-averaged; cells independent, deterministic given the seed list.
std::vector<SweepRow> bias_ratio_sweep(const std::vector<double>& r_list, const SweepConfig& cfg);

// CSV: r,erm_mean,erm_std_error,finetuned_mean,finetuned_std_error,
//      pivotal_precision_mean,pivotal_size_mean
void write_sweep_csv(const std::vector<SweepRow>& rows, std::ostream& out);
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::string& path);

struct ReportMeta {
    std::string dataset;  // "synthetic" or "cmnist"
    double conflict_ratio = 0.0;
    std::vector<std::uint64_t> seeds;
    std::string config_hash;
};

struct FullReport {
    ReportMeta meta;
    EvalReport erm;
    EvalReport finetuned;
    std::vector<MethodPrecision> precision;  // may be empty
    std::vector<SweepRow> sweep;             // may be empty
};

// Report JSON {meta, accuracies, groups, precision, sweep}; floats at 17
// significant digits (non-finite as null); precision rows labeled with their
// denominator mode.
void write_report_json(const FullReport& report, const std::string& path);

}  // namespace biasfix::eval
