#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "biasfix/dataset.hpp"
#include "biasfix/mlp.hpp"

namespace biasfix::influence {

// Mean-loss Hessian of the last layer (exact for the linear-softmax head),
// plus damping * I on the diagonal. Factorized once at construction when the
// damped matrix is positive definite; scoring against it is read-only.
struct LastLayerHessian {
    Eigen::MatrixXd matrix;  // damped, P x P with P = (h+1)*C
    double damping = 0.0;
    int n_samples = 0;
    nn::LossSpec loss;
    std::shared_ptr<const Eigen::LLT<Eigen::MatrixXd>> factor;  // null if not PD

    int dim() const { return static_cast<int>(matrix.rows()); }
    // trace of the Hessian before damping was added
    double raw_trace() const { return matrix.trace() - damping * dim(); }
};

// Assembles sum_n block_n / N + damping*I where block_n is the exact
// per-sample last-layer Hessian of the chosen loss at `params`.
// An empty dataset is allowed only with damping > 0 (pure damping*I).
LastLayerHessian assemble_hessian(const nn::MlpParams& params,
                                  const datagen::BiasedDataset& ds,
                                  const nn::LossSpec& loss, double damping);

// Returns a copy with delta added to the diagonal (and refactorized).
LastLayerHessian add_damping(const LastLayerHessian& hessian, double delta);

// The default damping policy: coeff * trace(H_raw) / P.
double relative_damping(const LastLayerHessian& hessian, double coeff = 1e-3);

// Cholesky solve with relative residual <= 1e-8 (iterative refinement if the
// first pass misses); throws NumericalError asking for more damping otherwise.
Eigen::VectorXd solve(const LastLayerHessian& hessian, const Eigen::Ref<const Eigen::VectorXd>& rhs);

double self_influence(const nn::MlpParams& params, const LastLayerHessian& hessian,
                      const datagen::Sample& sample, const nn::LossSpec& loss);

// grad(z_prime)^T H^-1 grad(z); symmetric in its sample arguments.
double cross_influence(const nn::MlpParams& params, const LastLayerHessian& hessian,
                       const datagen::Sample& z, const datagen::Sample& z_prime,
                       const nn::LossSpec& loss);

// Mean influence of z on the training set, computed as grad(z)^T H^-1 gbar
// with gbar the mean train gradient (single solve).
double if_train(const nn::MlpParams& params, const LastLayerHessian& hessian,
                const datagen::Sample& z, const datagen::BiasedDataset& ds,
                const nn::LossSpec& loss);

enum class ScoreMethod { Loss, GradNorm, SelfInfluence, Bcsi, IfTrain };

std::string method_name(ScoreMethod m);
ScoreMethod method_from_name(const std::string& name);

struct InfluenceRecord {
    std::uint64_t sample_id = 0;
    double score = 0.0;
    ScoreMethod method = ScoreMethod::SelfInfluence;
    std::uint64_t run_seed = 0;
    int epoch_t = 0;
};

// Trains a fresh GCE model for t_epochs, then scores every training sample by
// CE self-influence at those early-epoch parameters.
struct BcsiConfig {
    int t_epochs = 5;
    double q = 0.7;
    double lr = 1e-3;
    int batch_size = 32;
    double damping = 1e-3;  // relative coefficient, see relative_damping()
    std::uint64_t seed = 0;
};

std::vector<InfluenceRecord> bcsi_scores(const datagen::BiasedDataset& ds,
                                         const std::vector<int>& dims, const BcsiConfig& cfg);

// Conventional self-influence: CE model trained to convergence.
struct SiConfig {
    int epochs = 100;
    double lr = 1e-3;
    int batch_size = 32;
    double damping = 1e-3;  // relative coefficient
    std::uint64_t seed = 0;
};

std::vector<InfluenceRecord> si_scores(const datagen::BiasedDataset& ds,
                                       const std::vector<int>& dims, const SiConfig& cfg);

// Baseline scorers on an already-trained model.
std::vector<InfluenceRecord> loss_scores(const nn::MlpParams& params,
                                         const datagen::BiasedDataset& ds,
                                         std::uint64_t run_seed = 0, int epoch_t = 0);
std::vector<InfluenceRecord> gradnorm_scores(const nn::MlpParams& params,
                                             const datagen::BiasedDataset& ds,
                                             std::uint64_t run_seed = 0, int epoch_t = 0);

// Batched variants used by the evaluation harness (one factorization, many
// triangular solves).
std::vector<InfluenceRecord> self_influence_scores(const nn::MlpParams& params,
                                                   const LastLayerHessian& hessian,
                                                   const datagen::BiasedDataset& ds,
                                                   const nn::LossSpec& loss,
                                                   ScoreMethod tag, std::uint64_t run_seed,
                                                   int epoch_t);
std::vector<InfluenceRecord> if_train_scores(const nn::MlpParams& params,
                                             const LastLayerHessian& hessian,
                                             const datagen::BiasedDataset& ds,
                                             const nn::LossSpec& loss,
                                             std::uint64_t run_seed, int epoch_t);

// CSV dump: header sample_id,method,epoch_t,run_seed,score; 17 significant digits.
void write_scores_csv(const std::vector<InfluenceRecord>& records, std::ostream& out);
void write_scores_csv(const std::vector<InfluenceRecord>& records, const std::string& path);

}  // namespace biasfix::influence
