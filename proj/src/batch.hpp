#pragma once

// Private batched-inference helpers shared by training, scoring and eval.

#include <Eigen/Dense>

#include "biasfix/dataset.hpp"
#include "biasfix/mlp.hpp"

namespace biasfix::detail {

// One column per sample, feature_dim rows.
Eigen::MatrixXd features_matrix(const datagen::BiasedDataset& ds);

struct BatchActs {
    Eigen::MatrixXd penultimate;  // h x N (input of the last layer)
    Eigen::MatrixXd logits;       // C x N
};

BatchActs batch_forward(const nn::MlpParams& params, const Eigen::Ref<const Eigen::MatrixXd>& x);

// Column-wise softmax, max-subtracted.
Eigen::MatrixXd softmax_columns(const Eigen::Ref<const Eigen::MatrixXd>& logits);

// Argmax with ties broken to the lowest index.
int argmax_lowest(const Eigen::Ref<const Eigen::VectorXd>& v);

}  // namespace biasfix::detail
