#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "blindloss/contrastive.hpp"
#include "blindloss/data.hpp"
#include "blindloss/model.hpp"
#include "blindloss/tensor.hpp"

namespace blindloss {

struct OptimConfig {
    double base_lr = 1e-2;
    double lr_power = 0.9;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    int batch_size = 8;
    int total_iters = 2000;
};

enum class HeadMode { Shared, SharedStopGradient, Individual };
enum class CclForm { Diagonal, Whitening };
enum class PredSource { Augmented, Original };

struct LossConfig {
    bool use_cml = true;
    bool use_ccl = true;
    bool use_cwcl = true;
    bool use_sdcl = true;
    double omega1 = 0.2;  // CML
    double omega2 = 0.2;  // CCL
    double omega3 = 0.3;  // CWCL
    double omega4 = 0.3;  // SDCL
    double tau = 0.1;
    bool covariance_normalized = true;  // 1/(H*W) factor in covariance products
    CclForm ccl_form = CclForm::Diagonal;
    bool ce_on_augmented = false;
    PredSource sdcl_pred_source = PredSource::Augmented;
    bool normalize_embeddings = true;
    double instance_norm_eps = 1e-5;
};

struct HeadConfig {
    int embed_dim = 64;
    HeadMode mode = HeadMode::Shared;
};

struct TrainConfig {
    OptimConfig optimizer;
    LossConfig losses;
    CwclConfig cwcl;
    SdclConfig sdcl;
    HeadConfig head;
    NetworkConfig model;
    DataConfig data;
    std::uint64_t seed = 1;
    std::vector<std::uint64_t> experiment_seeds{1, 2, 3, 4, 5};
};

// base_lr * (1 - iter/total_iters)^power
double poly_lr(int iter, const OptimConfig& cfg);

// g' = g + weight_decay * w;  v = momentum * v + g';  w -= lr * v
void sgd_update(std::span<double> weights, std::span<const double> grads, std::span<double> velocity,
                double lr, double momentum, double weight_decay);

class Optimizer {
  public:
    void step(std::vector<NamedParameter>& params, double lr, const OptimConfig& cfg);

  private:
    std::vector<std::vector<double>> velocity_;
};

// ce + w1*cml + w2*ccl + w3*cwcl + w4*sdcl. Undefined tensors stand for
// disabled components. A non-finite component raises a DomainError naming it.
Tensor total_loss(const Tensor& ce, const Tensor& cml, const Tensor& ccl, const Tensor& cwcl,
                  const Tensor& sdcl, const LossConfig& cfg);

struct LossBreakdown {
    double ce = 0, cml = 0, ccl = 0, cwcl = 0, sdcl = 0, total = 0;
};

struct IterationRow {
    int iteration = 0;
    double lr = 0;
    LossBreakdown losses;
};

struct MetricsReport {
    int classes = 0;
    std::vector<std::int64_t> confusion;  // row-major, row = ground truth
    std::vector<double> per_class_iou;    // NaN where the class is absent everywhere
    double miou = 0.0;                    // mean over classes present in ground truth
    double pixel_accuracy = 0.0;
    double separation = 0.0;              // embedding separation score
};

MetricsReport metrics_from_confusion(std::vector<std::int64_t> confusion, int classes);

// (mean pairwise distance between class centroids) /
// (mean within-class distance to the own centroid + 1e-8)
double embedding_separation(const Tensor& points /* N x D */, const std::vector<int>& labels);

struct TrainResult {
    SegmentationNet net;
    std::vector<ProjectionHead> heads;       // per decoder block (CWCL, and SDCL when shared)
    std::vector<ProjectionHead> sdcl_heads;  // individual mode only
    std::vector<IterationRow> history;
};

// One full optimization run. Deterministic given cfg.seed: batch order,
// jitter, sampling and initialization all derive from it.
TrainResult train(const TrainConfig& cfg, std::span<const Scene> train_scenes);

// Confusion over all pixels at full resolution (argmax upscaled nearest-
// neighbor), plus the separation score over projected final-decoder-block
// embeddings labeled by the resized ground truth.
MetricsReport evaluate(const SegmentationNet& net, std::span<const ProjectionHead> heads,
                       std::span<const Scene> scenes, bool normalize_embeddings,
                       std::uint64_t eval_seed);

}  // namespace blindloss
