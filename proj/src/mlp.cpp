#include "biasfix/mlp.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "batch.hpp"
#include "binio.hpp"
#include "optim.hpp"
#include "biasfix/errors.hpp"
#include "biasfix/rng.hpp"

namespace biasfix::detail {

Eigen::MatrixXd features_matrix(const datagen::BiasedDataset& ds) {
    Eigen::MatrixXd x(ds.feature_dim, static_cast<Eigen::Index>(ds.size()));
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& f = ds.samples[i].features;
        if (static_cast<int>(f.size()) != ds.feature_dim)
            throw std::invalid_argument("sample feature length mismatch");
        x.col(static_cast<Eigen::Index>(i)) =
            Eigen::Map<const Eigen::VectorXd>(f.data(), static_cast<Eigen::Index>(f.size()));
    }
    return x;
}

BatchActs batch_forward(const nn::MlpParams& params, const Eigen::Ref<const Eigen::MatrixXd>& x) {
    if (x.rows() != params.input_dim()) throw std::invalid_argument("forward: feature dim mismatch");
    const std::size_t last = params.layers.size() - 1;
    Eigen::MatrixXd a = x;
    for (std::size_t l = 0; l < last; ++l) {
        a = ((params.layers[l].weight * a).colwise() + params.layers[l].bias).cwiseMax(0.0);
    }
    BatchActs out;
    out.penultimate = std::move(a);
    out.logits =
        (params.layers[last].weight * out.penultimate).colwise() + params.layers[last].bias;
    return out;
}

Eigen::MatrixXd softmax_columns(const Eigen::Ref<const Eigen::MatrixXd>& logits) {
    Eigen::MatrixXd p = logits;
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
        auto col = p.col(j);
        col.array() -= col.maxCoeff();
        col = col.array().exp();
        col /= col.sum();
    }
    return p;
}

int argmax_lowest(const Eigen::Ref<const Eigen::VectorXd>& v) {
    int best = 0;
    for (int i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

void apply_update(nn::MlpParams& params, const std::vector<Eigen::MatrixXd>& gw,
                  const std::vector<Eigen::VectorXd>& gb, nn::Optimizer optimizer,
                  const nn::AdamParams& ap, double lr, double weight_decay, AdamState* adam) {
    const std::size_t n_layers = params.layers.size();
    if (optimizer == nn::Optimizer::Adam) {
        adam->t += 1;
        const double c1 = 1.0 - std::pow(ap.beta1, static_cast<double>(adam->t));
        const double c2 = 1.0 - std::pow(ap.beta2, static_cast<double>(adam->t));
        for (std::size_t l = 0; l < n_layers; ++l) {
            auto& st = *adam;
            st.mw[l] = ap.beta1 * st.mw[l] + (1.0 - ap.beta1) * gw[l];
            st.vw[l] = ap.beta2 * st.vw[l] + (1.0 - ap.beta2) * gw[l].cwiseProduct(gw[l]);
            st.mb[l] = ap.beta1 * st.mb[l] + (1.0 - ap.beta1) * gb[l];
            st.vb[l] = ap.beta2 * st.vb[l] + (1.0 - ap.beta2) * gb[l].cwiseProduct(gb[l]);
            params.layers[l].weight.array() -=
                lr * (st.mw[l].array() / c1) / ((st.vw[l].array() / c2).sqrt() + ap.eps);
            params.layers[l].bias.array() -=
                lr * (st.mb[l].array() / c1) / ((st.vb[l].array() / c2).sqrt() + ap.eps);
        }
    } else {
        for (std::size_t l = 0; l < n_layers; ++l) {
            params.layers[l].weight -= lr * gw[l];
            params.layers[l].bias -= lr * gb[l];
        }
    }
    if (weight_decay > 0.0)
        for (auto& layer : params.layers) layer.weight *= 1.0 - lr * weight_decay;
}

void ce_loss_and_grad_sum(const nn::MlpParams& params,
                          const Eigen::Ref<const Eigen::MatrixXd>& x,
                          const std::vector<int>& labels, std::vector<Eigen::MatrixXd>& gw,
                          std::vector<Eigen::VectorXd>& gb, double& loss_sum) {
    const std::size_t n_layers = params.layers.size();
    std::vector<Eigen::MatrixXd> acts(n_layers + 1);
    acts[0] = x;
    for (std::size_t l = 0; l < n_layers; ++l) {
        acts[l + 1] = (params.layers[l].weight * acts[l]).colwise() + params.layers[l].bias;
        if (l + 1 < n_layers) acts[l + 1] = acts[l + 1].cwiseMax(0.0);
    }
    Eigen::MatrixXd dz = softmax_columns(acts[n_layers]);
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const int y = labels[static_cast<std::size_t>(j)];
        const double m = acts[n_layers].col(j).maxCoeff();
        loss_sum += m + std::log((acts[n_layers].col(j).array() - m).exp().sum()) -
                    acts[n_layers](y, j);
        dz(y, j) -= 1.0;
    }
    for (std::size_t l = n_layers; l-- > 0;) {
        // per-column rank-1 accumulation: the gradient sum is a fixed
        // per-sample sequence, so chunk boundaries cannot perturb it
        for (Eigen::Index j = 0; j < dz.cols(); ++j) {
            gw[l].noalias() += dz.col(j) * acts[l].col(j).transpose();
            gb[l] += dz.col(j);
        }
        if (l > 0) {
            Eigen::MatrixXd da = params.layers[l].weight.transpose() * dz;
            dz = da.array() * (acts[l].array() > 0.0).cast<double>();
        }
    }
}

}  // namespace biasfix::detail

namespace biasfix::nn {

std::vector<int> MlpParams::dims() const {
    std::vector<int> d;
    d.reserve(layers.size() + 1);
    d.push_back(input_dim());
    for (const auto& layer : layers) d.push_back(static_cast<int>(layer.weight.rows()));
    return d;
}

MlpParams init_mlp(const std::vector<int>& dims, std::uint64_t seed) {
    if (dims.size() < 2) throw std::invalid_argument("init_mlp: need at least [in, out] dims");
    for (int d : dims)
        if (d < 1) throw std::invalid_argument("init_mlp: dims must be >= 1");
    Rng rng(seed);
    MlpParams params;
    params.layers.resize(dims.size() - 1);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const int fan_in = dims[l];
        const int fan_out = dims[l + 1];
        const double lim = std::sqrt(6.0 / fan_in);
        Layer& layer = params.layers[l];
        layer.weight.resize(fan_out, fan_in);
        for (int r = 0; r < fan_out; ++r)
            for (int c = 0; c < fan_in; ++c) layer.weight(r, c) = rng.uniform(-lim, lim);
        layer.bias = Eigen::VectorXd::Zero(fan_out);
    }
    return params;
}

ForwardResult forward(const MlpParams& params, const Eigen::Ref<const Eigen::VectorXd>& features) {
    const auto acts = detail::batch_forward(params, features);
    return {acts.logits.col(0), acts.penultimate.col(0)};
}

ForwardResult forward(const MlpParams& params, const std::vector<double>& features) {
    return forward(params, Eigen::Map<const Eigen::VectorXd>(
                               features.data(), static_cast<Eigen::Index>(features.size())));
}

SoftmaxCe softmax_ce(const Eigen::Ref<const Eigen::VectorXd>& logits, int label) {
    if (label < 0 || label >= logits.size()) throw std::invalid_argument("softmax_ce: label out of range");
    const double m = logits.maxCoeff();
    Eigen::VectorXd shifted = logits.array() - m;
    const double lse = std::log(shifted.array().exp().sum());
    SoftmaxCe out;
    out.probs = (shifted.array() - lse).exp();
    out.loss = lse - shifted[label];  // == log-sum-exp(logits) - logits[label]
    return out;
}

double gce(const Eigen::Ref<const Eigen::VectorXd>& probs, int label, double q) {
    if (q <= 0.0 || q > 1.0) throw std::invalid_argument("gce: q must be in (0,1]");
    if (label < 0 || label >= probs.size()) throw std::invalid_argument("gce: label out of range");
    return (1.0 - std::pow(probs[label], q)) / q;
}

namespace {

double group_accuracy_from_preds(const std::vector<int>& preds,
                                 const datagen::BiasedDataset& ds, Group group) {
    std::size_t total = 0, correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& s = ds.samples[i];
        if (group == Group::Aligned && s.is_conflicting()) continue;
        if (group == Group::Conflicting && !s.is_conflicting()) continue;
        ++total;
        if (preds[i] == s.label) ++correct;
    }
    if (total == 0) return std::numeric_limits<double>::quiet_NaN();
    return static_cast<double>(correct) / static_cast<double>(total);
}

std::vector<int> batch_predictions(const MlpParams& params, const Eigen::MatrixXd& x) {
    std::vector<int> preds(static_cast<std::size_t>(x.cols()));
    constexpr Eigen::Index chunk = 8192;
    for (Eigen::Index start = 0; start < x.cols(); start += chunk) {
        const Eigen::Index width = std::min(chunk, x.cols() - start);
        const auto acts = detail::batch_forward(params, x.middleCols(start, width));
        for (Eigen::Index j = 0; j < width; ++j)
            preds[static_cast<std::size_t>(start + j)] = detail::argmax_lowest(acts.logits.col(j));
    }
    return preds;
}

}  // namespace

std::pair<MlpParams, TrainHistory> train(const MlpParams& params0,
                                         const datagen::BiasedDataset& ds,
                                         const TrainConfig& cfg) {
    if (ds.empty()) throw std::invalid_argument("train: empty dataset");
    if (cfg.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (cfg.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (cfg.lr <= 0.0) throw std::invalid_argument("train: lr must be > 0");
    if (cfg.loss.kind == LossKind::Gce && (cfg.loss.q <= 0.0 || cfg.loss.q > 1.0))
        throw std::invalid_argument("train: gce q must be in (0,1]");
    const int C = params0.output_dim();
    for (const auto& s : ds.samples)
        if (s.label < 0 || s.label >= C) throw std::invalid_argument("train: label out of range");

    const Eigen::MatrixXd x = detail::features_matrix(ds);
    const Eigen::Index n = x.cols();
    const std::size_t n_layers = params0.layers.size();

    MlpParams params = params0;
    detail::AdamState adam(params);
    Rng rng(cfg.seed);
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;

    TrainHistory history;
    std::vector<Eigen::MatrixXd> gw(n_layers);
    std::vector<Eigen::VectorXd> gb(n_layers);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(perm);
        double loss_sum = 0.0;
        for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
            const Eigen::Index b = std::min<Eigen::Index>(cfg.batch_size, n - start);
            Eigen::MatrixXd xb(x.rows(), b);
            for (Eigen::Index j = 0; j < b; ++j)
                xb.col(j) = x.col(perm[static_cast<std::size_t>(start + j)]);

            // forward, keeping each layer's activations for backprop
            std::vector<Eigen::MatrixXd> acts(n_layers + 1);
            acts[0] = std::move(xb);
            for (std::size_t l = 0; l < n_layers; ++l) {
                acts[l + 1] =
                    (params.layers[l].weight * acts[l]).colwise() + params.layers[l].bias;
                if (l + 1 < n_layers) acts[l + 1] = acts[l + 1].cwiseMax(0.0);
            }

            // loss and logit gradient, mean over the batch
            Eigen::MatrixXd dz = detail::softmax_columns(acts[n_layers]);
            for (Eigen::Index j = 0; j < b; ++j) {
                const auto& sample = ds.samples[static_cast<std::size_t>(
                    perm[static_cast<std::size_t>(start + j)])];
                const int y = sample.label;
                const double py = dz(y, j);
                if (cfg.loss.kind == LossKind::CrossEntropy) {
                    const double m = acts[n_layers].col(j).maxCoeff();
                    const double lse =
                        m + std::log((acts[n_layers].col(j).array() - m).exp().sum());
                    loss_sum += lse - acts[n_layers](y, j);
                    dz(y, j) -= 1.0;
                } else {
                    loss_sum += (1.0 - std::pow(py, cfg.loss.q)) / cfg.loss.q;
                    const double scale = std::pow(py, cfg.loss.q);
                    dz(y, j) -= 1.0;
                    dz.col(j) *= scale;
                }
            }
            dz /= static_cast<double>(b);

            for (std::size_t l = n_layers; l-- > 0;) {
                gw[l].noalias() = dz * acts[l].transpose();
                gb[l] = dz.rowwise().sum();
                if (l > 0) {
                    Eigen::MatrixXd da = params.layers[l].weight.transpose() * dz;
                    dz = da.array() * (acts[l].array() > 0.0).cast<double>();
                }
            }
            detail::apply_update(params, gw, gb, cfg.optimizer, cfg.adam, cfg.lr,
                                 cfg.weight_decay, &adam);
        }
        const double mean_loss = loss_sum / static_cast<double>(n);
        if (!std::isfinite(mean_loss))
            throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch + 1));
        const auto preds = batch_predictions(params, x);
        history.mean_loss.push_back(mean_loss);
        history.aligned_accuracy.push_back(group_accuracy_from_preds(preds, ds, Group::Aligned));
        history.conflicting_accuracy.push_back(
            group_accuracy_from_preds(preds, ds, Group::Conflicting));
    }
    return {std::move(params), std::move(history)};
}

Eigen::VectorXd last_layer_grad(const MlpParams& params, const datagen::Sample& sample,
                                const LossSpec& loss) {
    const auto fwd = forward(params, sample.features);
    const auto sm = softmax_ce(fwd.logits, sample.label);
    Eigen::VectorXd dlogits = sm.probs;
    dlogits[sample.label] -= 1.0;
    if (loss.kind == LossKind::Gce) {
        if (loss.q <= 0.0 || loss.q > 1.0) throw std::invalid_argument("gce: q must be in (0,1]");
        dlogits *= std::pow(sm.probs[sample.label], loss.q);
    }
    const int h = params.penultimate_dim();
    const int C = params.output_dim();
    Eigen::VectorXd grad((h + 1) * C);
    for (int r = 0; r < C; ++r)
        for (int c = 0; c < h; ++c) grad[r * h + c] = dlogits[r] * fwd.penultimate[c];
    grad.segment(C * h, C) = dlogits;
    return grad;
}

double accuracy(const MlpParams& params, const datagen::BiasedDataset& ds, Group group) {
    if (ds.empty()) throw std::invalid_argument("accuracy: empty dataset");
    const Eigen::MatrixXd x = detail::features_matrix(ds);
    const double acc = group_accuracy_from_preds(batch_predictions(params, x), ds, group);
    if (std::isnan(acc)) throw std::invalid_argument("accuracy: empty group after filtering");
    return acc;
}

std::map<std::pair<int, int>, double> per_group_accuracy(const MlpParams& params,
                                                         const datagen::BiasedDataset& ds) {
    if (ds.empty()) throw std::invalid_argument("accuracy: empty dataset");
    const Eigen::MatrixXd x = detail::features_matrix(ds);
    const auto preds = batch_predictions(params, x);
    std::map<std::pair<int, int>, std::pair<std::size_t, std::size_t>> counts;  // correct, total
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& s = ds.samples[i];
        auto& cell = counts[{s.label, s.bias_attr}];
        cell.second += 1;
        if (preds[i] == s.label) cell.first += 1;
    }
    std::map<std::pair<int, int>, double> acc;
    for (const auto& [key, cell] : counts)
        acc[key] = static_cast<double>(cell.first) / static_cast<double>(cell.second);
    return acc;
}

// ---------------------------------------------------------------------------
// BFMP checkpoint file
//   magic "BFMP" | version u8=1 | n_dims u16 | dims u32 each |
//   per layer: weight f64 row-major (out x in), bias f64 (out) |
//   crc32 u32 of all preceding bytes. Everything little-endian.
// ---------------------------------------------------------------------------

void save_checkpoint(const MlpParams& params, const std::string& path) {
    detail::Writer w;
    w.raw("BFMP", 4);
    w.u8(1);
    const auto dims = params.dims();
    w.u16(static_cast<std::uint16_t>(dims.size()));
    for (int d : dims) w.u32(static_cast<std::uint32_t>(d));
    for (const auto& layer : params.layers) {
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) w.f64(layer.weight(r, c));
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i) w.f64(layer.bias[i]);
    }
    detail::write_file_with_crc(path, w);
}

MlpParams load_checkpoint(const std::string& path) {
    const std::string body = detail::read_file_check_crc(path, "BFMP", 11);
    detail::Reader r{reinterpret_cast<const unsigned char*>(body.data()), body.size(), 4};
    const std::uint8_t version = r.u8();
    if (version != 1) throw FormatError("bfmp: unsupported version " + std::to_string(version));
    const std::uint16_t n_dims = r.u16();
    if (n_dims < 2) throw FormatError("bfmp: bad dims count");
    std::vector<int> dims(n_dims);
    for (auto& d : dims) {
        d = static_cast<int>(r.u32());
        if (d < 1) throw FormatError("bfmp: bad dim");
    }
    MlpParams params;
    params.layers.resize(n_dims - 1u);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        Layer& layer = params.layers[l];
        layer.weight.resize(dims[l + 1], dims[l]);
        for (Eigen::Index row = 0; row < layer.weight.rows(); ++row)
            for (Eigen::Index col = 0; col < layer.weight.cols(); ++col)
                layer.weight(row, col) = r.f64();
        layer.bias.resize(dims[l + 1]);
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias[i] = r.f64();
    }
    if (r.off != body.size()) throw FormatError("bfmp: trailing bytes");
    return params;
}

}  // namespace biasfix::nn
