#pragma once

#include <span>
#include <vector>

#include "blindloss/label_map.hpp"
#include "blindloss/rng.hpp"
#include "blindloss/tensor.hpp"

namespace blindloss {

// Two affine layers with a ReLU between, followed by L2 normalization of the
// output. One head per decoder block; CWCL and SDCL share the instance within
// a block unless configured otherwise.
struct ProjectionHead {
    Tensor w1, b1;  // in_dim -> embed_dim
    Tensor w2, b2;  // embed_dim -> embed_dim
    int in_dim = 0;
    int embed_dim = 0;

    static ProjectionHead init(int in_dim, int embed_dim, Rng& rng);

    // Same weights, detached from gradient tracking (stop-gradient mode).
    ProjectionHead detached() const;

    std::vector<Tensor> parameters() const { return {w1, b1, w2, b2}; }
};

// Projects k feature vectors at once: (k, in_dim) -> (k, embed_dim).
// Rows whose pre-normalization output is ~zero come out all-zero (degenerate);
// samplers exclude such rows from batches.
Tensor project_rows(const ProjectionHead& head, const Tensor& rows, bool normalize = true);

// Single-vector convenience: (in_dim) -> (embed_dim).
Tensor project(const ProjectionHead& head, const Tensor& feature_vector, bool normalize = true);

struct PixelSample {
    int row = 0;
    int col = 0;
};

// Anchor/positive/negative embeddings plus the pixel provenance needed to
// audit the sampling constraints.
struct ContrastiveBatch {
    Tensor anchor;
    Tensor positive;
    std::vector<Tensor> negatives;
    PixelSample anchor_position;
    int anchor_class = -1;               // CWCL: label; SDCL: true label at the anchor
    int anchor_predicted_class = -1;     // SDCL only
    std::vector<PixelSample> negative_positions;
    std::vector<int> negative_classes;   // labels at the negative positions
};

// -log( e^{a.p/tau} / (e^{a.p/tau} + sum_n e^{a.n/tau}) ), max-shifted.
Tensor info_nce(const ContrastiveBatch& batch, double tau);

// ---- sampling -------------------------------------------------------------

struct CwclConfig {
    int classes_per_image = 15;
    int anchors_per_class = 1;
    int negatives_per_class = 50;
};

struct SdclConfig {
    int anchors_per_image = 16;
    int negatives_per_anchor = 16;
};

// Candidate pools, exposed so tests can compare them against exhaustive
// enumeration.
std::vector<PixelSample> class_positions(const LabelMap& y, int cls);
std::vector<PixelSample> other_class_positions(const LabelMap& y, int cls);
std::vector<PixelSample> same_class_positions_excluding(const LabelMap& y, int cls, int exclude_row,
                                                        int exclude_col);
std::vector<PixelSample> error_positions(const ErrorMask& mask);

// Position-level draw for one image at one block. Negatives are drawn without
// replacement, falling back to with-replacement when the pool is short.
struct CwclDraw {
    PixelSample anchor;
    int anchor_class = -1;
    std::vector<PixelSample> negatives;
};
std::vector<CwclDraw> sample_cwcl_positions(const LabelMap& y, const CwclConfig& cfg, Rng& rng);

struct SdclDraw {
    PixelSample anchor;
    int true_class = -1;
    int predicted_class = -1;
    std::vector<PixelSample> negatives;
};
std::vector<SdclDraw> sample_sdcl_positions(const LabelMap& y, const LabelMap& prediction,
                                            const ErrorMask& mask, const SdclConfig& cfg, Rng& rng);

// Embedding-level samplers. CWCL: anchor from the augmented feature map,
// positive from the original at the same pixel, negatives from the original
// at other-class pixels. SDCL: anchors at error-mask positions, negatives
// from the augmented features at pixels whose ground truth equals the
// anchor's predicted class.
std::vector<ContrastiveBatch> sample_cwcl(const Tensor& feat, const Tensor& feat_aug,
                                          const LabelMap& y, const ProjectionHead& head,
                                          const CwclConfig& cfg, Rng& rng, bool normalize = true);
std::vector<ContrastiveBatch> sample_sdcl(const Tensor& feat, const Tensor& feat_aug,
                                          const LabelMap& y, const LabelMap& prediction,
                                          const ErrorMask& mask, const ProjectionHead& head,
                                          const SdclConfig& cfg, Rng& rng, bool normalize = true);

// ---- losses over decoder blocks ---------------------------------------------

// Sum over blocks of the mean InfoNCE over that block's batches. Labels are
// resized per block with the nearest-neighbor rule. Returns a no-gradient
// zero if no block yields a batch.
Tensor cwcl_loss(std::span<const Tensor> dec_feat, std::span<const Tensor> dec_feat_aug,
                 const LabelMap& labels, std::span<const ProjectionHead> heads,
                 const CwclConfig& cfg, double tau, Rng& rng, bool normalize = true);

// `prediction` is the argmax map of the augmented logits at prediction
// resolution; it is resized per block, the error mask is recomputed there,
// and gradients never flow through either resize.
Tensor sdcl_loss(std::span<const Tensor> dec_feat, std::span<const Tensor> dec_feat_aug,
                 const LabelMap& labels, const LabelMap& prediction,
                 std::span<const ProjectionHead> heads, const SdclConfig& cfg, double tau, Rng& rng,
                 bool normalize = true);

}  // namespace blindloss
