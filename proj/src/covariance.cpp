#include "blindloss/covariance.hpp"

#include <string>
#include <vector>

namespace blindloss {

NormalizedFeature instance_normalize(const Tensor& feature, double eps) {
    if (!feature.defined() || feature.rank() != 3)
        throw ContractViolation("instance_normalize: expected an (H, W, C) tensor");
    if (eps <= 0) throw ContractViolation("instance_normalize: eps must be positive");
    const int h = feature.dim(0), w = feature.dim(1), c = feature.dim(2);
    const int hw = h * w;
    if (hw < 2) throw ContractViolation("instance_normalize: needs at least 2 spatial positions");

    Tensor flat = reshape(feature, {hw, c});
    Tensor mu = mean(flat, {0});                      // [c]
    Tensor centered = sub(flat, tile_rows(mu, hw));   // (hw, c)
    Tensor variance = mean(mul(centered, centered), {0});
    Tensor denom = clamp_min(sqrt(variance), eps);    // population sigma, floored
    Tensor out = div(centered, tile_rows(denom, hw));
    return NormalizedFeature{out, h, w, c};
}

namespace {

CovarianceMatrix covariance_product(const NormalizedFeature& a, const NormalizedFeature& b,
                                    bool normalized, const char* op) {
    if (!a.values.defined() || !b.values.defined())
        throw ContractViolation(std::string(op) + ": undefined feature");
    if (a.values.shape() != b.values.shape())
        throw ContractViolation(std::string(op) + ": shape mismatch " + shape_str(a.values.shape()) +
                                " vs " + shape_str(b.values.shape()));
    const int hw = a.values.dim(0);
    Tensor product = matmul(transpose(a.values), b.values);
    CovarianceMatrix out;
    out.normalizer = normalized ? 1.0 / static_cast<double>(hw) : 1.0;
    out.values = normalized ? mul(product, out.normalizer) : product;
    return out;
}

Tensor euclidean_norm(const Tensor& v) {
    // sqrt's subgradient at 0 is 0, so the zero-loss point is a fixed point.
    return sqrt(sum(mul(v, v)));
}

}  // namespace

CovarianceMatrix covariance(const NormalizedFeature& f, bool normalized) {
    return covariance_product(f, f, normalized, "covariance");
}

CovarianceMatrix cross_covariance(const NormalizedFeature& f, const NormalizedFeature& f_aug,
                                  bool normalized) {
    return covariance_product(f, f_aug, normalized, "cross_covariance");
}

Tensor cml_loss(std::span<const std::pair<CovarianceMatrix, CovarianceMatrix>> pairs) {
    if (pairs.empty()) throw ContractViolation("cml_loss: empty block list");
    Tensor total;
    for (const auto& [sigma_x, sigma_a] : pairs) {
        if (sigma_x.values.shape() != sigma_a.values.shape())
            throw ContractViolation("cml_loss: covariance shape mismatch");
        Tensor block = euclidean_norm(sub(sigma_x.values, sigma_a.values));
        total = total.defined() ? add(total, block) : block;
    }
    return total;
}

Tensor ccl_loss(std::span<const CovarianceMatrix> crosses) {
    if (crosses.empty()) throw ContractViolation("ccl_loss: empty block list");
    Tensor total;
    for (const CovarianceMatrix& sigma : crosses) {
        if (!sigma.values.defined() || sigma.values.rank() != 2 ||
            sigma.values.dim(0) != sigma.values.dim(1))
            throw ContractViolation("ccl_loss: covariance must be square");
        Tensor block = euclidean_norm(sub(diagonal(sigma.values), 1.0));
        total = total.defined() ? add(total, block) : block;
    }
    return total;
}

Tensor ccl_whitening_loss(std::span<const CovarianceMatrix> crosses) {
    if (crosses.empty()) throw ContractViolation("ccl_whitening_loss: empty block list");
    Tensor total;
    for (const CovarianceMatrix& sigma : crosses) {
        if (!sigma.values.defined() || sigma.values.rank() != 2 ||
            sigma.values.dim(0) != sigma.values.dim(1))
            throw ContractViolation("ccl_whitening_loss: covariance must be square");
        Tensor block = euclidean_norm(sub(sigma.values, Tensor::identity(sigma.values.dim(0))));
        total = total.defined() ? add(total, block) : block;
    }
    return total;
}

Tensor cml_loss_from_features(std::span<const Tensor> features, std::span<const Tensor> features_aug,
                              double eps, bool normalized) {
    if (features.size() != features_aug.size() || features.empty())
        throw ContractViolation("cml_loss_from_features: block lists must be non-empty and equal length");
    std::vector<std::pair<CovarianceMatrix, CovarianceMatrix>> pairs;
    pairs.reserve(features.size());
    for (std::size_t i = 0; i < features.size(); ++i) {
        NormalizedFeature nx = instance_normalize(features[i], eps);
        NormalizedFeature na = instance_normalize(features_aug[i], eps);
        pairs.emplace_back(covariance(nx, normalized), covariance(na, normalized));
    }
    return cml_loss(pairs);
}

Tensor ccl_loss_from_features(std::span<const Tensor> features, std::span<const Tensor> features_aug,
                              bool whitening, double eps, bool normalized) {
    if (features.size() != features_aug.size() || features.empty())
        throw ContractViolation("ccl_loss_from_features: block lists must be non-empty and equal length");
    std::vector<CovarianceMatrix> crosses;
    crosses.reserve(features.size());
    for (std::size_t i = 0; i < features.size(); ++i) {
        NormalizedFeature nx = instance_normalize(features[i], eps);
        NormalizedFeature na = instance_normalize(features_aug[i], eps);
        crosses.push_back(cross_covariance(nx, na, normalized));
    }
    return whitening ? ccl_whitening_loss(crosses) : ccl_loss(crosses);
}

}  // namespace blindloss
