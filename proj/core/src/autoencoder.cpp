#include "malegs/autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <stdexcept>

#include "binio.hpp"

namespace malegs {

namespace {

constexpr double kLeakySlope = 0.01;

Eigen::MatrixXd leaky(const Eigen::MatrixXd& z) {
    return z.unaryExpr([](double v) { return v > 0.0 ? v : kLeakySlope * v; });
}

Eigen::MatrixXd leaky_deriv(const Eigen::MatrixXd& z) {
    return z.unaryExpr([](double v) { return v > 0.0 ? 1.0 : kLeakySlope; });
}

// Runs one chain (encoder or decoder), keeping pre-activations for backprop.
// Hidden layers are leaky-rectified, the last layer is linear.
struct ChainTrace {
    std::vector<Eigen::MatrixXd> inputs;  // per-layer input activations
    std::vector<Eigen::MatrixXd> pre;     // per-layer pre-activations
    Eigen::MatrixXd out;
};

ChainTrace run_chain(const std::vector<MlpLayer>& chain, const Eigen::MatrixXd& x,
                     bool keep_trace) {
    ChainTrace t;
    Eigen::MatrixXd a = x;
    for (size_t i = 0; i < chain.size(); ++i) {
        if (keep_trace) t.inputs.push_back(a);
        Eigen::MatrixXd z = (chain[i].weight * a).colwise() + chain[i].bias;
        if (keep_trace) t.pre.push_back(z);
        a = (i + 1 < chain.size()) ? leaky(z) : std::move(z);
    }
    t.out = std::move(a);
    return t;
}

// Backpropagates dL/d(out) through a traced chain, accumulating parameter
// gradients; returns dL/d(input).
Eigen::MatrixXd backprop_chain(const std::vector<MlpLayer>& chain, const ChainTrace& t,
                               Eigen::MatrixXd delta, std::vector<MlpLayer>& grads) {
    for (int i = static_cast<int>(chain.size()) - 1; i >= 0; --i) {
        if (i + 1 < static_cast<int>(chain.size()))
            delta = delta.cwiseProduct(leaky_deriv(t.pre[i]));
        grads[i].weight.noalias() += delta * t.inputs[i].transpose();
        grads[i].bias.noalias() += delta.rowwise().sum();
        delta = chain[i].weight.transpose() * delta;
    }
    return delta;
}

Eigen::MatrixXd run_plain(const std::vector<MlpLayer>& chain, const Eigen::MatrixXd& x) {
    Eigen::MatrixXd a = x;
    for (size_t i = 0; i < chain.size(); ++i) {
        Eigen::MatrixXd z = (chain[i].weight * a).colwise() + chain[i].bias;
        a = (i + 1 < chain.size()) ? leaky(z) : std::move(z);
    }
    return a;
}

}  // namespace

MlpParams init_params(int input_dim, int latent_dim, const std::vector<int>& hidden,
                      uint64_t seed) {
    if (latent_dim < 1 || input_dim < latent_dim)
        throw std::invalid_argument("init_params: need input_dim >= latent_dim >= 1");
    for (int h : hidden)
        if (h <= latent_dim)
            throw std::invalid_argument("init_params: hidden widths must exceed latent_dim");

    std::mt19937_64 rng(seed);
    auto make_layer = [&rng](int out, int in) {
        const double limit = std::sqrt(6.0 / (in + out));
        std::uniform_real_distribution<double> u(-limit, limit);
        MlpLayer l;
        l.weight.resize(out, in);
        for (int r = 0; r < out; ++r)
            for (int c = 0; c < in; ++c) l.weight(r, c) = u(rng);
        l.bias = Eigen::VectorXd::Zero(out);
        return l;
    };

    std::vector<int> enc_dims{input_dim};
    enc_dims.insert(enc_dims.end(), hidden.begin(), hidden.end());
    enc_dims.push_back(latent_dim);

    MlpParams p;
    for (size_t i = 0; i + 1 < enc_dims.size(); ++i)
        p.encoder.push_back(make_layer(enc_dims[i + 1], enc_dims[i]));
    for (size_t i = enc_dims.size() - 1; i > 0; --i)
        p.decoder.push_back(make_layer(enc_dims[i - 1], enc_dims[i]));
    return p;
}

Eigen::MatrixXd encode(const MlpParams& p, const Eigen::MatrixXd& features) {
    if (features.rows() != p.input_dim())
        throw std::invalid_argument("encode: feature dim mismatch");
    return run_plain(p.encoder, features);
}

Eigen::MatrixXd decode_raw(const MlpParams& p, const Eigen::MatrixXd& latents) {
    if (latents.rows() != p.latent_dim())
        throw std::invalid_argument("decode: latent dim mismatch");
    return run_plain(p.decoder, latents);
}

Eigen::MatrixXd decode(const MlpParams& p, const Eigen::MatrixXd& latents) {
    Eigen::MatrixXd out = decode_raw(p, latents);
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
        const double n = out.col(j).norm();
        if (n >= 1e-12) out.col(j) /= n;
    }
    return out;
}

Eigen::VectorXd encode(const MlpParams& p, const Eigen::VectorXd& feature) {
    return encode(p, Eigen::MatrixXd(feature)).col(0);
}

Eigen::VectorXd decode(const MlpParams& p, const Eigen::VectorXd& latent) {
    return decode(p, Eigen::MatrixXd(latent)).col(0);
}

namespace {

// Shared loss/gradient core over one batch of samples (by index). Fully
// masked samples are excluded from optimization entirely, including the
// mean's denominator. Reports the active count through out_count.
double batch_loss_grad(const MlpParams& p, const std::vector<AeSample>& samples,
                       const std::vector<size_t>& idx, MlpGrads* grads,
                       double* out_count = nullptr) {
    std::vector<size_t> active;
    active.reserve(idx.size());
    double total_count = 0.0;
    for (size_t i : idx) {
        if (samples[i].weight != 0.0) {
            total_count += samples[i].count;
            active.push_back(i);
        }
    }
    if (out_count) *out_count = total_count;
    if (total_count == 0.0 || active.empty()) return 0.0;

    const int d = p.input_dim();
    Eigen::MatrixXd x(d, active.size());
    Eigen::VectorXd counts(active.size());
    for (size_t j = 0; j < active.size(); ++j) {
        const AeSample& s = samples[active[j]];
        if (s.feature.size() != d) throw std::invalid_argument("ae_loss: feature dim mismatch");
        x.col(j) = s.weight * s.feature;
        counts[j] = s.count;
    }

    ChainTrace enc = run_chain(p.encoder, x, grads != nullptr);
    ChainTrace dec = run_chain(p.decoder, enc.out, grads != nullptr);
    const Eigen::MatrixXd residual = dec.out - x;

    double loss = 0.0;
    for (Eigen::Index j = 0; j < residual.cols(); ++j)
        loss += counts[j] * residual.col(j).lpNorm<1>();
    loss /= total_count;

    if (grads) {
        Eigen::MatrixXd delta = residual.unaryExpr(
            [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
        for (Eigen::Index j = 0; j < delta.cols(); ++j)
            delta.col(j) *= counts[j] / total_count;
        // The target is the masked input x, which does not depend on the
        // parameters, so only the reconstruction path backpropagates.
        Eigen::MatrixXd dlatent = backprop_chain(p.decoder, dec, std::move(delta), grads->decoder);
        backprop_chain(p.encoder, enc, std::move(dlatent), grads->encoder);
    }
    return loss;
}

std::vector<size_t> all_indices(size_t n) {
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    return idx;
}

}  // namespace

MlpGrads zeroed_like(const MlpParams& p) {
    MlpGrads g;
    for (const auto& l : p.encoder)
        g.encoder.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                             Eigen::VectorXd::Zero(l.bias.size())});
    for (const auto& l : p.decoder)
        g.decoder.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                             Eigen::VectorXd::Zero(l.bias.size())});
    return g;
}

double ae_loss(const MlpParams& p, const std::vector<AeSample>& samples) {
    if (samples.empty()) return 0.0;
    return batch_loss_grad(p, samples, all_indices(samples.size()), nullptr);
}

double ae_loss_grad(const MlpParams& p, const std::vector<AeSample>& samples, MlpGrads& out) {
    if (samples.empty()) return 0.0;
    return batch_loss_grad(p, samples, all_indices(samples.size()), &out);
}

namespace {

struct AdamState {
    std::vector<MlpLayer> m_enc, v_enc, m_dec, v_dec;
    double beta1_t = 1.0, beta2_t = 1.0;
};

void adam_step(std::vector<MlpLayer>& params, const std::vector<MlpLayer>& grads,
               std::vector<MlpLayer>& m, std::vector<MlpLayer>& v, double lr, double bc1,
               double bc2) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (size_t i = 0; i < params.size(); ++i) {
        m[i].weight = b1 * m[i].weight + (1 - b1) * grads[i].weight;
        v[i].weight = b2 * v[i].weight + (1 - b2) * grads[i].weight.cwiseAbs2();
        params[i].weight -= lr * (m[i].weight / bc1)
                                .cwiseQuotient(((v[i].weight / bc2).cwiseSqrt().array() + eps)
                                                   .matrix());
        m[i].bias = b1 * m[i].bias + (1 - b1) * grads[i].bias;
        v[i].bias = b2 * v[i].bias + (1 - b2) * grads[i].bias.cwiseAbs2();
        params[i].bias -= lr * (m[i].bias / bc1)
                              .cwiseQuotient(((v[i].bias / bc2).cwiseSqrt().array() + eps)
                                                 .matrix());
    }
}

}  // namespace

AeTrainResult train_ae(const std::vector<AeSample>& dataset, const MlpParams& initial,
                       const TrainConfig& cfg) {
    std::vector<size_t> usable;
    for (size_t i = 0; i < dataset.size(); ++i) usable.push_back(i);
    if (usable.empty()) throw std::invalid_argument("train_ae: empty dataset");

    AeTrainResult result;
    result.params = initial;
    AdamState adam;
    auto zero = zeroed_like(initial);
    adam.m_enc = zero.encoder;
    adam.v_enc = zero.encoder;
    adam.m_dec = zero.decoder;
    adam.v_dec = zero.decoder;

    std::mt19937_64 rng(cfg.seed);
    const size_t batch = std::max<size_t>(1, static_cast<size_t>(cfg.batch_size));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(usable.begin(), usable.end(), rng);
        double epoch_loss = 0.0;
        double epoch_count = 0.0;
        for (size_t start = 0; start < usable.size(); start += batch) {
            const size_t end = std::min(usable.size(), start + batch);
            std::vector<size_t> idx(usable.begin() + start, usable.begin() + end);
            MlpGrads grads = zeroed_like(result.params);
            double weight = 0.0;
            const double loss = batch_loss_grad(result.params, dataset, idx, &grads, &weight);
            if (!std::isfinite(loss))
                throw std::runtime_error("train_ae: loss diverged at epoch " +
                                         std::to_string(epoch));
            epoch_loss += loss * weight;
            epoch_count += weight;

            adam.beta1_t *= 0.9;
            adam.beta2_t *= 0.999;
            const double bc1 = 1.0 - adam.beta1_t;
            const double bc2 = 1.0 - adam.beta2_t;
            adam_step(result.params.encoder, grads.encoder, adam.m_enc, adam.v_enc,
                      cfg.learning_rate, bc1, bc2);
            adam_step(result.params.decoder, grads.decoder, adam.m_dec, adam.v_dec,
                      cfg.learning_rate, bc1, bc2);
        }
        result.loss_curve.push_back(epoch_count > 0 ? epoch_loss / epoch_count : 0.0);
    }
    return result;
}

void save_params(const MlpParams& p, const std::string& path) {
    auto os = binio::open_out(path);
    os.write("MAE1", 4);
    binio::write_u32(os, static_cast<uint32_t>(p.encoder.size() + p.decoder.size()));
    auto dump = [&os](const MlpLayer& l) {
        binio::write_u32(os, static_cast<uint32_t>(l.weight.rows()));
        binio::write_u32(os, static_cast<uint32_t>(l.weight.cols()));
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
                binio::write_f32(os, static_cast<float>(l.weight(r, c)));
        for (Eigen::Index r = 0; r < l.bias.size(); ++r)
            binio::write_f32(os, static_cast<float>(l.bias[r]));
    };
    for (const auto& l : p.encoder) dump(l);
    for (const auto& l : p.decoder) dump(l);
    if (!os) throw std::runtime_error("short write: " + path);
}

MlpParams load_params(const std::string& path) {
    auto is = binio::open_in(path);
    binio::expect_magic(is, "MAE1", path);
    const uint32_t count = binio::read_u32(is);
    std::vector<MlpLayer> layers(count);
    uint32_t min_out = UINT32_MAX;
    for (auto& l : layers) {
        const uint32_t rows = binio::read_u32(is);
        const uint32_t cols = binio::read_u32(is);
        min_out = std::min(min_out, rows);
        l.weight.resize(rows, cols);
        for (uint32_t r = 0; r < rows; ++r)
            for (uint32_t c = 0; c < cols; ++c) l.weight(r, c) = binio::read_f32(is);
        l.bias.resize(rows);
        for (uint32_t r = 0; r < rows; ++r) l.bias[r] = binio::read_f32(is);
    }
    if (!is) throw std::runtime_error("truncated params: " + path);

    MlpParams p;
    bool in_decoder = false;
    for (auto& l : layers) {
        if (!in_decoder) {
            p.encoder.push_back(std::move(l));
            if (p.encoder.back().weight.rows() == min_out) in_decoder = true;
        } else {
            p.decoder.push_back(std::move(l));
        }
    }
    if (p.encoder.empty() || p.decoder.empty())
        throw std::runtime_error("params file missing encoder or decoder: " + path);
    return p;
}

void save_loss_curve(const std::vector<double>& curve, const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    std::fprintf(f, "epoch,loss\n");
    for (size_t i = 0; i < curve.size(); ++i)
        std::fprintf(f, "%zu,%.9g\n", i, curve[i]);
    std::fclose(f);
}

}  // namespace malegs
