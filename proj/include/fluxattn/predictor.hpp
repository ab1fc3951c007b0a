#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fluxattn/features.hpp"
#include "fluxattn/label_io.hpp"

namespace fluxattn {

struct DenseLayer {
    std::size_t in = 0;
    std::size_t out = 0;
    std::vector<double> w; // [out x in], row-major
    std::vector<double> b; // [out]
};

/// Shared-backbone feed-forward predictor, 41 -> 256 -> 384 -> 3 by default
/// (~0.111M parameters). Output 0 regresses bgt0, output 1 regresses k,
/// output 2 is the streaming logit.
struct PredictorModel {
    std::vector<DenseLayer> layers;
    FeatureNorms norms;

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.w.size() + l.b.size();
        return n;
    }
};

PredictorModel make_model(std::uint64_t seed);
PredictorModel make_zero_model();

struct Prediction {
    double bgt0 = 0.0;   // clamped to [0, 1]
    double k = 0.0;
    double s_prob = 0.5; // logistic streaming probability
};

/// Inference on an already-normalized feature vector.
Prediction forward(const PredictorModel& model, const FeatureVector& normalized_fv);

/// Convenience: normalize with the model statistics, then forward.
Prediction predict(const PredictorModel& model, const FeatureVector& raw_fv);

/// Pre-activation outputs (no clamps); training and gradient checks use this.
std::array<double, 3> forward_raw(const PredictorModel& model, const FeatureVector& fv);

struct TrainConfig {
    double w_bgt = 1.0;
    double w_k = 1.0;
    double w_s = 1.0;
    std::size_t batch = 128;
    std::size_t steps = 1500;
    double lr = 1e-3;
    double lr_decay = 1.0; // multiplicative, applied each step
    std::uint64_t seed = 1;
    double val_fraction = 0.1; // split by sample id
};

struct TrainResult {
    PredictorModel model;
    std::vector<double> loss_curve; // per-step training loss
    double val_loss_initial = 0.0;
    double val_loss_final = 0.0;
    std::size_t train_rows = 0;
    std::size_t val_rows = 0;
};

TrainResult train(const LabelDataset& dataset, const TrainConfig& cfg);

struct EvalMetrics {
    double mse_bgt0 = 0.0;
    double mse_k = 0.0;
    double s_accuracy = 0.0;
    double s_auc = 0.5;
};

EvalMetrics evaluate(const PredictorModel& model, const LabelDataset& heldout);

/// Multi-task loss (w_bgt MSE + w_k MSE + w_s BCE) of the model on rows;
/// exposed for gradient checking.
double dataset_loss(const PredictorModel& model, const LabelDataset& rows,
                    const TrainConfig& cfg);

/// Loss plus analytic parameter gradients over the whole row set.
double loss_and_gradients(const PredictorModel& model, const LabelDataset& rows,
                          const TrainConfig& cfg, std::vector<DenseLayer>& grads);

// FXP1 model file: shapes, f32 parameters, 41 normalization (mu, sigma) pairs.
void save_model(const PredictorModel& model, const std::string& path,
                std::uint64_t input_hash = 0);
PredictorModel load_model(const std::string& path, std::uint64_t* input_hash = nullptr);

/// Sample-id split helper (train ids, validation ids); deterministic in seed.
std::pair<std::vector<std::uint32_t>, std::vector<std::uint32_t>>
split_samples(const LabelDataset& ds, double val_fraction, std::uint64_t seed);

} // namespace fluxattn
