#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "biasfix/dataset.hpp"
#include "biasfix/finetune.hpp"
#include "biasfix/influence.hpp"
#include "biasfix/mlp.hpp"

namespace biasfix::config {

// Line-based `key = value` file with dotted section paths. `#` starts a
// comment, blank lines are skipped, later duplicates win. Values are kept as
// raw strings; typed getters throw ConfigError naming the offending key.
class KvConfig {
  public:
    static KvConfig parse(std::istream& in);
    static KvConfig parse_file(const std::string& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& fallback);
    bool get_bool(const std::string& key, bool fallback);
    int get_int(const std::string& key, int fallback);
    double get_double(const std::string& key, double fallback);
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback);
    // comma-separated lists
    std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback);
    std::vector<double> get_double_list(const std::string& key,
                                        const std::vector<double>& fallback);
    std::vector<std::uint64_t> get_u64_list(const std::string& key,
                                            const std::vector<std::uint64_t>& fallback);

    // keys present in the file but never read by a getter (typo detection)
    std::vector<std::string> unused_keys() const;

  private:
    std::map<std::string, std::string> values_;
    std::set<std::string> used_;
};

// Everything the pipeline stages need, with desk-scale defaults.
struct PipelineConfig {
    // data
    std::string data_source = "synthetic";  // "synthetic" | "idx"
    datagen::GenConfig gen;
    std::string idx_images;       // idx source only
    std::string idx_labels;
    std::string idx_test_images;  // optional held-out pair
    std::string idx_test_labels;
    int test_per_class = 200;     // synthetic unbiased test size

    // model
    std::vector<int> hidden_dims = {100, 100};

    // erm
    nn::TrainConfig erm{.epochs = 20};

    // scoring / pivotal
    std::string score_method = "bcsi";
    influence::BcsiConfig bcsi;
    influence::SiConfig si;
    int k = 100;
    int num_runs = 3;
    std::vector<std::uint64_t> run_seeds = {1, 2, 3};

    // finetune
    finetune::FineTuneConfig ft;

    // eval
    std::vector<std::uint64_t> eval_seeds = {1, 2, 3, 4, 5};
    std::vector<double> sweep_r;   // empty: no sweep in cmd_eval
    bool compare_methods = false;  // run the detector comparison in cmd_eval

    std::string out_dir = "out";

    // Full layer widths: [feature_dim, hidden..., num_classes].
    std::vector<int> dims() const;
    int num_classes() const;

    // Throws ConfigError with the field path on invalid values.
    void validate() const;

    // Canonical `key = value` dump of every field that shapes artifacts;
    // hash8() is the first 8 hex digits of its FNV-1a 64 digest.
    std::string canonical() const;
    std::string hash8() const;
};

// Builds from parsed keys, applying defaults; rejects unknown keys and
// invalid values with ConfigError naming the key.
PipelineConfig load_pipeline_config(KvConfig& kv);
PipelineConfig load_pipeline_config_file(const std::string& path);

// --seed N: re-derives every stage seed from the base so one flag moves the
// whole pipeline to a fresh deterministic stream.
void apply_seed_override(PipelineConfig& cfg, std::uint64_t base);

}  // namespace biasfix::config
