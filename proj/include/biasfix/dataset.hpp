#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace biasfix::datagen {

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };

// One training/evaluation point. `bias_attr` is ground truth used only for
// evaluation; training code never reads it. Under the canonical bias map
// (bias index == class index), a sample conflicts iff bias_attr != label.
struct Sample {
    std::uint64_t id = 0;
    std::vector<double> features;
    int label = 0;
    int bias_attr = 0;

    bool is_conflicting() const { return bias_attr != label; }
};

struct BiasedDataset {
    std::vector<Sample> samples;
    int num_classes = 0;
    double conflict_ratio = 0.0;  // requested ratio, not the empirical one
    Split split = Split::Train;
    int feature_dim = 0;

    std::size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
    double empirical_conflict_fraction() const;
};

// Synthetic generator config. Features are [signal block | bias block];
// class y puts mass signal_margin on signal coordinate y, the bias attribute
// puts mass bias_margin on its bias coordinate, i.i.d. Gaussian noise on top.
// bias_margin > signal_margin so the bias is the easier feature to learn.
struct GenConfig {
    int n_per_class = 500;
    int num_classes = 5;
    int d_signal = 5;  // must be >= num_classes
    int d_bias = 5;    // must be >= num_classes
    double signal_margin = 1.0;
    double bias_margin = 3.0;
    double noise_sigma = 1.0;
    double conflict_ratio = 0.05;
    std::uint64_t seed = 0;

    int feature_dim() const { return d_signal + d_bias; }
    void validate() const;  // throws std::invalid_argument
};

BiasedDataset generate_synthetic(const GenConfig& cfg);

// Same feature model, bias attribute uniform over all classes, split=test.
BiasedDataset generate_unbiased_test(const GenConfig& cfg, int n_per_class);

// Fixed palette used to colorize grayscale IDX images (one color per class).
extern const std::array<std::array<double, 3>, 10> kColorPalette;

// Reads IDX3 images + IDX1 labels, expands each grayscale image to planar
// RGB scaled to [0,1] and tinted with a palette color: the label's color with
// probability 1-r, otherwise a uniformly drawn other color.
BiasedDataset load_idx_with_color_bias(const std::string& images_path,
                                       const std::string& labels_path,
                                       double conflict_ratio, std::uint64_t seed,
                                       Split split = Split::Train);

// Binary dataset file ("BFDS"), CRC32-checked, byte-stable round trips.
void save_dataset(const BiasedDataset& ds, const std::string& path);
BiasedDataset load_dataset(const std::string& path);

}  // namespace biasfix::datagen
