#include "biasfix/influence.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "batch.hpp"
#include "biasfix/errors.hpp"
#include "biasfix/util.hpp"

namespace biasfix::influence {

namespace {

// Natural (Kronecker) last-layer index r*(h+1)+j -> the public gradient
// layout [weight row-major (C x h), bias (C)].
std::vector<int> nat_to_pinned(int h, int C) {
    std::vector<int> pos(static_cast<std::size_t>((h + 1) * C));
    for (int r = 0; r < C; ++r)
        for (int j = 0; j <= h; ++j)
            pos[static_cast<std::size_t>(r * (h + 1) + j)] = j < h ? r * h + j : C * h + r;
    return pos;
}

std::shared_ptr<const Eigen::LLT<Eigen::MatrixXd>> try_factor(const Eigen::MatrixXd& m) {
    auto llt = std::make_shared<Eigen::LLT<Eigen::MatrixXd>>(m);
    if (llt->info() != Eigen::Success) return nullptr;
    return llt;
}

}  // namespace

LastLayerHessian assemble_hessian(const nn::MlpParams& params, const datagen::BiasedDataset& ds,
                                  const nn::LossSpec& loss, double damping) {
    if (damping < 0.0) throw std::invalid_argument("hessian: damping must be >= 0");
    const int h = params.penultimate_dim();
    const int C = params.output_dim();
    const int P = params.last_layer_param_count();

    LastLayerHessian out;
    out.damping = damping;
    out.n_samples = static_cast<int>(ds.size());
    out.loss = loss;

    if (ds.empty()) {
        if (damping <= 0.0)
            throw std::invalid_argument("hessian: empty dataset needs damping > 0");
        out.matrix = damping * Eigen::MatrixXd::Identity(P, P);
        out.factor = try_factor(out.matrix);
        return out;
    }
    if (loss.kind == nn::LossKind::Gce && (loss.q <= 0.0 || loss.q > 1.0))
        throw std::invalid_argument("hessian: gce q must be in (0,1]");

    const Eigen::MatrixXd x = detail::features_matrix(ds);
    const Eigen::Index n = x.cols();
    // natural layout: H = sum_n S_n kron u_n u_n^T / N with u_n = [h_n; 1];
    // each (r1,r2) class block accumulates as U * diag(s) * U^T over chunks.
    Eigen::MatrixXd hnat = Eigen::MatrixXd::Zero(P, P);
    constexpr Eigen::Index chunk = 4096;
    for (Eigen::Index start = 0; start < n; start += chunk) {
        const Eigen::Index b = std::min(chunk, n - start);
        const auto acts = detail::batch_forward(params, x.middleCols(start, b));
        if (!acts.logits.allFinite()) throw NumericalError("hessian: non-finite activations");
        const Eigen::MatrixXd probs = detail::softmax_columns(acts.logits);
        Eigen::MatrixXd u(h + 1, b);
        u.topRows(h) = acts.penultimate;
        u.row(h).setOnes();

        Eigen::ArrayXd scale = Eigen::ArrayXd::Ones(b);   // GCE: p_y^q per sample
        Eigen::MatrixXd d;                                // GCE: e_y - p per sample
        if (loss.kind == nn::LossKind::Gce) {
            d = -probs;
            for (Eigen::Index j = 0; j < b; ++j) {
                const int y = ds.samples[static_cast<std::size_t>(start + j)].label;
                d(y, j) += 1.0;
                scale[j] = std::pow(probs(y, j), loss.q);
            }
        }

        Eigen::ArrayXd s(b);
        for (int r1 = 0; r1 < C; ++r1) {
            for (int r2 = r1; r2 < C; ++r2) {
                const auto p1 = probs.row(r1).transpose().array();
                const auto p2 = probs.row(r2).transpose().array();
                if (r1 == r2)
                    s = p1 * (1.0 - p1);
                else
                    s = -p1 * p2;
                if (loss.kind == nn::LossKind::Gce) {
                    const auto d1 = d.row(r1).transpose().array();
                    const auto d2 = d.row(r2).transpose().array();
                    s = scale * (s - loss.q * d1 * d2);
                }
                const Eigen::MatrixXd block =
                    (u.array().rowwise() * s.transpose()).matrix() * u.transpose();
                hnat.block(r1 * (h + 1), r2 * (h + 1), h + 1, h + 1) += block;
                if (r1 != r2)
                    hnat.block(r2 * (h + 1), r1 * (h + 1), h + 1, h + 1) += block.transpose();
            }
        }
    }
    hnat /= static_cast<double>(n);

    const auto pos = nat_to_pinned(h, C);
    out.matrix.resize(P, P);
    for (int k1 = 0; k1 < P; ++k1)
        for (int k2 = 0; k2 < P; ++k2)
            out.matrix(pos[static_cast<std::size_t>(k1)], pos[static_cast<std::size_t>(k2)]) =
                hnat(k1, k2);
    out.matrix.diagonal().array() += damping;
    out.factor = try_factor(out.matrix);
    return out;
}

LastLayerHessian add_damping(const LastLayerHessian& hessian, double delta) {
    if (delta < 0.0) throw std::invalid_argument("hessian: damping delta must be >= 0");
    LastLayerHessian out = hessian;
    out.matrix.diagonal().array() += delta;
    out.damping += delta;
    out.factor = try_factor(out.matrix);
    return out;
}

double relative_damping(const LastLayerHessian& hessian, double coeff) {
    return coeff * hessian.raw_trace() / hessian.dim();
}

Eigen::VectorXd solve(const LastLayerHessian& hessian, const Eigen::Ref<const Eigen::VectorXd>& rhs) {
    if (rhs.size() != hessian.dim()) throw std::invalid_argument("solve: rhs dim mismatch");
    if (!hessian.factor)
        throw NumericalError("solve: hessian not positive definite; increase damping");
    const double rhs_norm = rhs.norm();
    Eigen::VectorXd x = hessian.factor->solve(rhs);
    if (rhs_norm == 0.0) return Eigen::VectorXd::Zero(rhs.size());
    for (int pass = 0; pass < 3; ++pass) {
        const Eigen::VectorXd residual = rhs - hessian.matrix * x;
        if (residual.norm() / rhs_norm <= 1e-8) return x;
        x += hessian.factor->solve(residual);
    }
    if ((rhs - hessian.matrix * x).norm() / rhs_norm <= 1e-8) return x;
    throw NumericalError("solve: residual above 1e-8; increase damping");
}

double self_influence(const nn::MlpParams& params, const LastLayerHessian& hessian,
                      const datagen::Sample& sample, const nn::LossSpec& loss) {
    const Eigen::VectorXd g = nn::last_layer_grad(params, sample, loss);
    return g.dot(solve(hessian, g));
}

double cross_influence(const nn::MlpParams& params, const LastLayerHessian& hessian,
                       const datagen::Sample& z, const datagen::Sample& z_prime,
                       const nn::LossSpec& loss) {
    const Eigen::VectorXd g = nn::last_layer_grad(params, z, loss);
    const Eigen::VectorXd g_prime = nn::last_layer_grad(params, z_prime, loss);
    return g_prime.dot(solve(hessian, g));
}

namespace {

// Per-sample last-layer gradients for a column block, pinned layout.
Eigen::MatrixXd grad_block(const Eigen::MatrixXd& probs, const Eigen::MatrixXd& penult,
                           const datagen::BiasedDataset& ds, Eigen::Index start, Eigen::Index b,
                           const nn::LossSpec& loss) {
    const int C = static_cast<int>(probs.rows());
    const int h = static_cast<int>(penult.rows());
    Eigen::MatrixXd g((h + 1) * C, b);
    for (Eigen::Index j = 0; j < b; ++j) {
        const int y = ds.samples[static_cast<std::size_t>(start + j)].label;
        Eigen::VectorXd dlogits = probs.col(j);
        dlogits[y] -= 1.0;
        if (loss.kind == nn::LossKind::Gce) dlogits *= std::pow(probs(y, j), loss.q);
        for (int r = 0; r < C; ++r)
            g.col(j).segment(r * h, h) = dlogits[r] * penult.col(j);
        g.col(j).segment(C * h, C) = dlogits;
    }
    return g;
}

Eigen::VectorXd mean_train_grad(const nn::MlpParams& params, const datagen::BiasedDataset& ds,
                                const nn::LossSpec& loss) {
    const Eigen::MatrixXd x = detail::features_matrix(ds);
    Eigen::VectorXd gbar = Eigen::VectorXd::Zero(params.last_layer_param_count());
    constexpr Eigen::Index chunk = 4096;
    for (Eigen::Index start = 0; start < x.cols(); start += chunk) {
        const Eigen::Index b = std::min(chunk, x.cols() - start);
        const auto acts = detail::batch_forward(params, x.middleCols(start, b));
        const Eigen::MatrixXd probs = detail::softmax_columns(acts.logits);
        gbar += grad_block(probs, acts.penultimate, ds, start, b, loss).rowwise().sum();
    }
    return gbar / static_cast<double>(ds.size());
}

}  // namespace

double if_train(const nn::MlpParams& params, const LastLayerHessian& hessian,
                const datagen::Sample& z, const datagen::BiasedDataset& ds,
                const nn::LossSpec& loss) {
    if (ds.empty()) throw std::invalid_argument("if_train: empty dataset");
    const Eigen::VectorXd g = nn::last_layer_grad(params, z, loss);
    return g.dot(solve(hessian, mean_train_grad(params, ds, loss)));
}

std::string method_name(ScoreMethod m) {
    switch (m) {
        case ScoreMethod::Loss: return "loss";
        case ScoreMethod::GradNorm: return "gradnorm";
        case ScoreMethod::SelfInfluence: return "si";
        case ScoreMethod::Bcsi: return "bcsi";
        case ScoreMethod::IfTrain: return "if_train";
    }
    throw std::invalid_argument("unknown score method");
}

ScoreMethod method_from_name(const std::string& name) {
    if (name == "loss") return ScoreMethod::Loss;
    if (name == "gradnorm") return ScoreMethod::GradNorm;
    if (name == "si") return ScoreMethod::SelfInfluence;
    if (name == "bcsi") return ScoreMethod::Bcsi;
    if (name == "if_train") return ScoreMethod::IfTrain;
    throw std::invalid_argument("unknown score method: " + name);
}

std::vector<InfluenceRecord> self_influence_scores(const nn::MlpParams& params,
                                                   const LastLayerHessian& hessian,
                                                   const datagen::BiasedDataset& ds,
                                                   const nn::LossSpec& loss, ScoreMethod tag,
                                                   std::uint64_t run_seed, int epoch_t) {
    if (!hessian.factor)
        throw NumericalError("solve: hessian not positive definite; increase damping");
    const Eigen::MatrixXd x = detail::features_matrix(ds);
    std::vector<InfluenceRecord> records(ds.size());
    const auto& llt = *hessian.factor;
    constexpr Eigen::Index chunk = 2048;
    for (Eigen::Index start = 0; start < x.cols(); start += chunk) {
        const Eigen::Index b = std::min(chunk, x.cols() - start);
        const auto acts = detail::batch_forward(params, x.middleCols(start, b));
        const Eigen::MatrixXd probs = detail::softmax_columns(acts.logits);
        Eigen::MatrixXd g = grad_block(probs, acts.penultimate, ds, start, b, loss);
        // g^T H^-1 g = ||L^-1 g||^2 for H = L L^T
        llt.matrixL().solveInPlace(g);
        for (Eigen::Index j = 0; j < b; ++j) {
            auto& rec = records[static_cast<std::size_t>(start + j)];
            rec.sample_id = ds.samples[static_cast<std::size_t>(start + j)].id;
            rec.score = g.col(j).squaredNorm();
            rec.method = tag;
            rec.run_seed = run_seed;
            rec.epoch_t = epoch_t;
        }
    }
    return records;
}

std::vector<InfluenceRecord> if_train_scores(const nn::MlpParams& params,
                                             const LastLayerHessian& hessian,
                                             const datagen::BiasedDataset& ds,
                                             const nn::LossSpec& loss, std::uint64_t run_seed,
                                             int epoch_t) {
    if (ds.empty()) throw std::invalid_argument("if_train: empty dataset");
    const Eigen::VectorXd hinv_gbar = solve(hessian, mean_train_grad(params, ds, loss));
    const Eigen::MatrixXd x = detail::features_matrix(ds);
    std::vector<InfluenceRecord> records(ds.size());
    constexpr Eigen::Index chunk = 4096;
    for (Eigen::Index start = 0; start < x.cols(); start += chunk) {
        const Eigen::Index b = std::min(chunk, x.cols() - start);
        const auto acts = detail::batch_forward(params, x.middleCols(start, b));
        const Eigen::MatrixXd probs = detail::softmax_columns(acts.logits);
        const Eigen::MatrixXd g = grad_block(probs, acts.penultimate, ds, start, b, loss);
        const Eigen::VectorXd scores = g.transpose() * hinv_gbar;
        for (Eigen::Index j = 0; j < b; ++j) {
            auto& rec = records[static_cast<std::size_t>(start + j)];
            rec.sample_id = ds.samples[static_cast<std::size_t>(start + j)].id;
            rec.score = scores[j];
            rec.method = ScoreMethod::IfTrain;
            rec.run_seed = run_seed;
            rec.epoch_t = epoch_t;
        }
    }
    return records;
}

std::vector<InfluenceRecord> loss_scores(const nn::MlpParams& params,
                                         const datagen::BiasedDataset& ds, std::uint64_t run_seed,
                                         int epoch_t) {
    const Eigen::MatrixXd x = detail::features_matrix(ds);
    std::vector<InfluenceRecord> records(ds.size());
    constexpr Eigen::Index chunk = 8192;
    for (Eigen::Index start = 0; start < x.cols(); start += chunk) {
        const Eigen::Index b = std::min(chunk, x.cols() - start);
        const auto acts = detail::batch_forward(params, x.middleCols(start, b));
        for (Eigen::Index j = 0; j < b; ++j) {
            const auto& sample = ds.samples[static_cast<std::size_t>(start + j)];
            auto& rec = records[static_cast<std::size_t>(start + j)];
            rec.sample_id = sample.id;
            rec.score = nn::softmax_ce(acts.logits.col(j), sample.label).loss;
            rec.method = ScoreMethod::Loss;
            rec.run_seed = run_seed;
            rec.epoch_t = epoch_t;
        }
    }
    return records;
}

std::vector<InfluenceRecord> gradnorm_scores(const nn::MlpParams& params,
                                             const datagen::BiasedDataset& ds,
                                             std::uint64_t run_seed, int epoch_t) {
    const Eigen::MatrixXd x = detail::features_matrix(ds);
    std::vector<InfluenceRecord> records(ds.size());
    constexpr Eigen::Index chunk = 8192;
    for (Eigen::Index start = 0; start < x.cols(); start += chunk) {
        const Eigen::Index b = std::min(chunk, x.cols() - start);
        const auto acts = detail::batch_forward(params, x.middleCols(start, b));
        const Eigen::MatrixXd probs = detail::softmax_columns(acts.logits);
        for (Eigen::Index j = 0; j < b; ++j) {
            const auto& sample = ds.samples[static_cast<std::size_t>(start + j)];
            Eigen::VectorXd dlogits = probs.col(j);
            dlogits[sample.label] -= 1.0;
            // ||kron(dlogits, [h;1])|| = ||dlogits|| * sqrt(||h||^2 + 1)
            const double score =
                dlogits.norm() * std::sqrt(acts.penultimate.col(j).squaredNorm() + 1.0);
            auto& rec = records[static_cast<std::size_t>(start + j)];
            rec.sample_id = sample.id;
            rec.score = score;
            rec.method = ScoreMethod::GradNorm;
            rec.run_seed = run_seed;
            rec.epoch_t = epoch_t;
        }
    }
    return records;
}

std::vector<InfluenceRecord> bcsi_scores(const datagen::BiasedDataset& ds,
                                         const std::vector<int>& dims, const BcsiConfig& cfg) {
    nn::TrainConfig tc;
    tc.loss = nn::LossSpec::gce(cfg.q);
    tc.epochs = cfg.t_epochs;
    tc.lr = cfg.lr;
    tc.batch_size = cfg.batch_size;
    tc.seed = cfg.seed;
    const auto [params, history] = nn::train(nn::init_mlp(dims, cfg.seed), ds, tc);
    auto hessian = assemble_hessian(params, ds, nn::LossSpec::ce(), 0.0);
    hessian = add_damping(hessian, relative_damping(hessian, cfg.damping));
    return self_influence_scores(params, hessian, ds, nn::LossSpec::ce(), ScoreMethod::Bcsi,
                                 cfg.seed, cfg.t_epochs);
}

std::vector<InfluenceRecord> si_scores(const datagen::BiasedDataset& ds,
                                       const std::vector<int>& dims, const SiConfig& cfg) {
    nn::TrainConfig tc;
    tc.loss = nn::LossSpec::ce();
    tc.epochs = cfg.epochs;
    tc.lr = cfg.lr;
    tc.batch_size = cfg.batch_size;
    tc.seed = cfg.seed;
    const auto [params, history] = nn::train(nn::init_mlp(dims, cfg.seed), ds, tc);
    auto hessian = assemble_hessian(params, ds, nn::LossSpec::ce(), 0.0);
    hessian = add_damping(hessian, relative_damping(hessian, cfg.damping));
    return self_influence_scores(params, hessian, ds, nn::LossSpec::ce(),
                                 ScoreMethod::SelfInfluence, cfg.seed, cfg.epochs);
}

void write_scores_csv(const std::vector<InfluenceRecord>& records, std::ostream& out) {
    out << "sample_id,method,epoch_t,run_seed,score\n";
    for (const auto& rec : records)
        out << rec.sample_id << ',' << method_name(rec.method) << ',' << rec.epoch_t << ','
            << rec.run_seed << ',' << g17(rec.score) << '\n';
}

void write_scores_csv(const std::vector<InfluenceRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    write_scores_csv(records, out);
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace biasfix::influence
