#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "biasfix/dataset.hpp"
#include "biasfix/influence.hpp"

namespace biasfix::selection {

// Per-class top-k selections from independently seeded scoring runs and their
// intersection (the pivotal set).
struct PivotalSet {
    // per_run[run][class] -> ids in descending score order, ties to lower id
    std::vector<std::vector<std::vector<std::uint64_t>>> per_run;
    std::vector<std::uint64_t> intersection;  // sorted ascending
    int k = 0;
    int num_runs = 0;
    influence::ScoreMethod method = influence::ScoreMethod::Bcsi;
    std::vector<std::uint64_t> seeds;
    std::string warning;  // nonempty when the intersection needed a fallback

    std::vector<std::uint64_t> run_union(int run) const;  // union over classes
};

// ids of the k highest-score samples per class (fewer if the class is small);
// requires a score for every sample in ds.
std::vector<std::vector<std::uint64_t>> topk_per_class(
    const std::vector<influence::InfluenceRecord>& records,
    const datagen::BiasedDataset& ds, int k);

// num_runs independently seeded BCSI scorings, per-class top-k, intersection.
// An empty intersection falls back to the first two runs (warning recorded);
// jobs > 1 runs the scorings on worker threads (identical results either way).
PivotalSet build_pivotal(const datagen::BiasedDataset& ds, const std::vector<int>& dims,
                         const influence::BcsiConfig& cfg, int k, int num_runs,
                         const std::vector<std::uint64_t>& seeds, int jobs = 1);

enum class PrecisionDenominator { SelectedSize, GroundTruthCount };

// Fraction of selected samples that are bias-conflicting. GroundTruthCount
// divides by the dataset's total conflicting count instead of |selection|.
double detection_precision(const std::vector<std::uint64_t>& selected_ids,
                           const datagen::BiasedDataset& ds,
                           PrecisionDenominator denominator = PrecisionDenominator::SelectedSize);

// Top-G ids by score where G is the ground-truth conflicting count (the
// ranking protocol behind the ground-truth-count precision mode).
std::vector<std::uint64_t> top_by_ground_truth_count(
    const std::vector<influence::InfluenceRecord>& records, const datagen::BiasedDataset& ds);

// JSON artifact: k, num_runs, seeds, per-run ids per class, intersection ids,
// and precisions when ground truth is supplied.
void save_pivotal_json(const PivotalSet& set, const std::string& path,
                       const datagen::BiasedDataset* ground_truth = nullptr,
                       const std::string& config_hash = "");
PivotalSet load_pivotal_json(const std::string& path);

}  // namespace biasfix::selection
