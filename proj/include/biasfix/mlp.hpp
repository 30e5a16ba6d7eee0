#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "biasfix/dataset.hpp"

namespace biasfix::nn {

enum class LossKind { CrossEntropy, Gce };

struct LossSpec {
    LossKind kind = LossKind::CrossEntropy;
    double q = 0.7;  // GCE only, in (0, 1]

    static LossSpec ce() { return {LossKind::CrossEntropy, 0.0}; }
    static LossSpec gce(double q) { return {LossKind::Gce, q}; }
};

struct Layer {
    Eigen::MatrixXd weight;  // out x in
    Eigen::VectorXd bias;    // out
};

// Feedforward rectifier network; the final layer is affine (logits).
struct MlpParams {
    std::vector<Layer> layers;

    std::vector<int> dims() const;
    int input_dim() const { return static_cast<int>(layers.front().weight.cols()); }
    int output_dim() const { return static_cast<int>(layers.back().weight.rows()); }
    int penultimate_dim() const { return static_cast<int>(layers.back().weight.cols()); }
    // flattened last-layer parameter count: (penultimate_dim + 1) * output_dim
    int last_layer_param_count() const { return (penultimate_dim() + 1) * output_dim(); }
};

// Weights uniform in +/- sqrt(6 / fan_in), biases zero.
MlpParams init_mlp(const std::vector<int>& dims, std::uint64_t seed);

struct ForwardResult {
    Eigen::VectorXd logits;
    Eigen::VectorXd penultimate;  // input of the last layer (post-activation)
};

ForwardResult forward(const MlpParams& params, const Eigen::Ref<const Eigen::VectorXd>& features);
ForwardResult forward(const MlpParams& params, const std::vector<double>& features);

struct SoftmaxCe {
    Eigen::VectorXd probs;
    double loss = 0.0;
};

// Max-subtracted softmax; loss via log-sum-exp so saturated logits stay exact.
SoftmaxCe softmax_ce(const Eigen::Ref<const Eigen::VectorXd>& logits, int label);

// Generalized cross entropy (1 - p_y^q) / q. Gradient w.r.t. logits is
// p_y^q * (probs - onehot(y)), i.e. the CE gradient scaled by p_y^q.
double gce(const Eigen::Ref<const Eigen::VectorXd>& probs, int label, double q);

enum class Optimizer { Sgd, Adam };

struct AdamParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    LossSpec loss = LossSpec::ce();
    int epochs = 1;
    double lr = 1e-3;
    int batch_size = 32;
    std::uint64_t seed = 0;
    double weight_decay = 0.0;  // decoupled (applied to weights directly)
    Optimizer optimizer = Optimizer::Adam;
    AdamParams adam;
};

struct TrainHistory {
    std::vector<double> mean_loss;
    std::vector<double> aligned_accuracy;      // NaN if the group is empty
    std::vector<double> conflicting_accuracy;  // NaN if the group is empty
};

// Seeded mini-batch training; pure function of (params, ds, cfg).
std::pair<MlpParams, TrainHistory> train(const MlpParams& params,
                                         const datagen::BiasedDataset& ds,
                                         const TrainConfig& cfg);

// Flattened per-sample loss gradient w.r.t. the last layer, layout
// [weight row-major (C x h), bias (C)], length (h+1)*C.
Eigen::VectorXd last_layer_grad(const MlpParams& params, const datagen::Sample& sample,
                                const LossSpec& loss);

enum class Group { All, Aligned, Conflicting };

// Argmax accuracy with deterministic tie-break to the lowest class index.
double accuracy(const MlpParams& params, const datagen::BiasedDataset& ds,
                Group group = Group::All);

// Accuracy per (label, bias_attr) cell; empty cells are absent.
std::map<std::pair<int, int>, double> per_group_accuracy(const MlpParams& params,
                                                         const datagen::BiasedDataset& ds);

// Binary checkpoint ("BFMP"), CRC32-checked.
void save_checkpoint(const MlpParams& params, const std::string& path);
MlpParams load_checkpoint(const std::string& path);

}  // namespace biasfix::nn
