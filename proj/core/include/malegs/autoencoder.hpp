#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace malegs {

struct MlpLayer {
    Eigen::MatrixXd weight;  // out x in
    Eigen::VectorXd bias;
};

// Encoder D -> hidden... -> C and mirrored decoder, leaky-rectifier (slope
// 0.01) on hidden layers, identity on both chain outputs.
struct MlpParams {
    std::vector<MlpLayer> encoder;
    std::vector<MlpLayer> decoder;

    int input_dim() const { return static_cast<int>(encoder.front().weight.cols()); }
    int latent_dim() const { return static_cast<int>(encoder.back().weight.rows()); }
};

struct TrainConfig {
    int epochs = 100;
    double learning_rate = 1e-4;
    int batch_size = 32;
    uint64_t seed = 0;
    double tau_u = 0.9;
};

// One training sample: feature already carries its per-pixel mask weight
// semantics (weight = 1 - U^T); count folds duplicate pixels into one
// record without changing the loss.
struct AeSample {
    Eigen::VectorXd feature;
    double weight = 1.0;
    double count = 1.0;
};

// Glorot-uniform weights, zero biases, deterministic per seed. Hidden
// widths must stay strictly above the latent width.
MlpParams init_params(int input_dim, int latent_dim, const std::vector<int>& hidden,
                      uint64_t seed);

// Column-per-sample forward passes. decode() L2-normalizes each output
// column (skipped below norm 1e-12); decode_raw() is the training-path
// output that the reconstruction loss compares against its target.
Eigen::MatrixXd encode(const MlpParams& p, const Eigen::MatrixXd& features);
Eigen::MatrixXd decode(const MlpParams& p, const Eigen::MatrixXd& latents);
Eigen::MatrixXd decode_raw(const MlpParams& p, const Eigen::MatrixXd& latents);
Eigen::VectorXd encode(const MlpParams& p, const Eigen::VectorXd& feature);
Eigen::VectorXd decode(const MlpParams& p, const Eigen::VectorXd& latent);

// Weighted mean over samples of || decode_raw(encode(w*F)) - w*F ||_1.
// Fully masked samples (w = 0) contribute zero loss and zero gradient.
double ae_loss(const MlpParams& p, const std::vector<AeSample>& samples);

// Analytic gradient of ae_loss; layout mirrors MlpParams.
struct MlpGrads {
    std::vector<MlpLayer> encoder;
    std::vector<MlpLayer> decoder;
};
MlpGrads zeroed_like(const MlpParams& p);
double ae_loss_grad(const MlpParams& p, const std::vector<AeSample>& samples, MlpGrads& out);

struct AeTrainResult {
    MlpParams params;
    std::vector<double> loss_curve;  // per-epoch mean training loss
};

// Adam (beta1 0.9, beta2 0.999, eps 1e-8) over seeded shuffled minibatches.
// Aborts with a diagnostic when the loss goes non-finite.
AeTrainResult train_ae(const std::vector<AeSample>& dataset, const MlpParams& initial,
                       const TrainConfig& cfg);

// MAE1 params file: magic "MAE1", u32 layer count, then per layer u32 rows,
// u32 cols, row-major f32 weights, f32 biases. Encoder layers first; the
// encoder/decoder split is the first layer whose output width equals the
// smallest width in the file.
void save_params(const MlpParams& p, const std::string& path);
MlpParams load_params(const std::string& path);

// CSV "epoch,loss" rows.
void save_loss_curve(const std::vector<double>& curve, const std::string& path);

}  // namespace malegs
