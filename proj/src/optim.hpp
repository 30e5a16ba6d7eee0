#pragma once

// Private optimizer-step helper shared by nn::train and finetune.

#include <Eigen/Dense>
#include <vector>

#include "biasfix/mlp.hpp"

namespace biasfix::detail {

struct AdamState {
    std::vector<Eigen::MatrixXd> mw, vw;
    std::vector<Eigen::VectorXd> mb, vb;
    long t = 0;

    explicit AdamState(const nn::MlpParams& params) {
        for (const auto& layer : params.layers) {
            mw.push_back(Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols()));
            vw.push_back(Eigen::MatrixXd::Zero(layer.weight.rows(), layer.weight.cols()));
            mb.push_back(Eigen::VectorXd::Zero(layer.bias.size()));
            vb.push_back(Eigen::VectorXd::Zero(layer.bias.size()));
        }
    }
};

// One step from per-layer gradients; decoupled weight decay hits weights only.
void apply_update(nn::MlpParams& params, const std::vector<Eigen::MatrixXd>& gw,
                  const std::vector<Eigen::VectorXd>& gb, nn::Optimizer optimizer,
                  const nn::AdamParams& adam_params, double lr, double weight_decay,
                  AdamState* adam);

// ADDS the per-sample CE losses into loss_sum and the sum-reduced gradients
// into gw/gb (caller zeroes and normalizes). Accumulating sample by sample
// keeps chunked full-batch passes bitwise identical to a single pass.
void ce_loss_and_grad_sum(const nn::MlpParams& params,
                          const Eigen::Ref<const Eigen::MatrixXd>& x,
                          const std::vector<int>& labels, std::vector<Eigen::MatrixXd>& gw,
                          std::vector<Eigen::VectorXd>& gb, double& loss_sum);

}  // namespace biasfix::detail
