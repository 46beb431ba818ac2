#pragma once

#include <span>
#include <utility>

#include "blindloss/tensor.hpp"

namespace blindloss {

// Per-channel standardized feature map, flattened to (H*W) x C. Channels with
// zero spatial variance come out all-zero.
struct NormalizedFeature {
    Tensor values;  // (H*W) x C
    int height = 0;
    int width = 0;
    int channels = 0;
};

// C x C (cross-)covariance of normalized features. With `normalizer` 1/(H*W)
// the self form has unit diagonal for non-constant channels and the cross
// diagonal holds per-channel Pearson correlations.
struct CovarianceMatrix {
    Tensor values;  // C x C
    double normalizer = 1.0;
};

// Standardizes each channel over spatial positions and flattens. The divisor
// is the population standard deviation floored at eps, so near-constant
// channels cannot amplify gradients by more than 1/eps.
NormalizedFeature instance_normalize(const Tensor& feature /* H x W x C */, double eps = 1e-5);

CovarianceMatrix covariance(const NormalizedFeature& f, bool normalized = true);

CovarianceMatrix cross_covariance(const NormalizedFeature& f, const NormalizedFeature& f_aug,
                                  bool normalized = true);

// Sum over blocks of the Frobenius norm of the self-covariance difference.
Tensor cml_loss(std::span<const std::pair<CovarianceMatrix, CovarianceMatrix>> pairs);

// Sum over blocks of the Euclidean norm of diag(cross-covariance) - 1.
// Off-diagonal entries receive zero gradient.
Tensor ccl_loss(std::span<const CovarianceMatrix> crosses);

// Ablation form: drives the full cross-covariance toward the identity.
Tensor ccl_whitening_loss(std::span<const CovarianceMatrix> crosses);

// Convenience wrappers over raw (pre-normalization) encoder feature pairs.
Tensor cml_loss_from_features(std::span<const Tensor> features, std::span<const Tensor> features_aug,
                              double eps = 1e-5, bool normalized = true);
Tensor ccl_loss_from_features(std::span<const Tensor> features, std::span<const Tensor> features_aug,
                              bool whitening = false, double eps = 1e-5, bool normalized = true);

}  // namespace blindloss
