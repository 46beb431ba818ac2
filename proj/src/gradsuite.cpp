#include "blindloss/gradsuite.hpp"

#include "blindloss/contrastive.hpp"
#include "blindloss/covariance.hpp"
#include "blindloss/model.hpp"
#include "blindloss/rng.hpp"
#include "blindloss/tensor.hpp"

#include <algorithm>

namespace blindloss {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor::from(std::move(shape), std::move(v));
}

LabelMap random_labels(int h, int w, int classes, Rng& rng) {
    LabelMap y(h, w);
    for (int& v : y.values) v = rng.below(classes);
    return y;
}

// Central differences are only meaningful where the loss is smooth. An
// instance is usable when every ReLU preactivation and every pre-normalization
// embedding norm clears `margin`, so a +-h probe cannot cross a kink or the
// degenerate-row exclusion boundary.
bool projection_margin_ok(const Tensor& feat, const ProjectionHead& head, double margin) {
    NoGradScope eval_only;
    const int hw = feat.dim(0) * feat.dim(1);
    Tensor rows = reshape(feat, {hw, feat.dim(2)});
    Tensor hidden_pre = add(matmul(rows, head.w1), tile_rows(head.b1, hw));
    for (double v : hidden_pre.data())
        if (std::abs(v) < margin) return false;
    Tensor out = add(matmul(relu(hidden_pre), head.w2), tile_rows(head.b2, hw));
    for (int r = 0; r < hw; ++r) {
        double norm2 = 0;
        for (int k = 0; k < head.embed_dim; ++k) {
            const double v = out.data()[static_cast<std::size_t>(r) * head.embed_dim + k];
            norm2 += v * v;
        }
        if (norm2 < margin * margin) return false;
    }
    return true;
}

constexpr double kSmoothMargin = 1e-3;
constexpr int kMaxRedraws = 40;

}  // namespace

std::vector<GradSuiteResult> run_gradient_suite(int instances_per_loss, std::uint64_t seed) {
    std::vector<GradSuiteResult> results;

    {
        GradSuiteResult r{"cml", 0.0, instances_per_loss};
        for (int i = 0; i < instances_per_loss; ++i) {
            Rng rng(derive_seed(seed, 1, static_cast<std::uint64_t>(i)));
            const int h = 2 + rng.below(3), w = 2 + rng.below(3), c = 1 + rng.below(3);
            Tensor fixed = random_tensor({h, w, c}, rng);
            Tensor x = random_tensor({h, w, c}, rng);
            auto f = [&](const Tensor& t) {
                std::vector<Tensor> xs{t}, as{fixed};
                return cml_loss_from_features(xs, as);
            };
            r.max_error = std::max(r.max_error, grad_check(f, x));
        }
        results.push_back(r);
    }
    {
        GradSuiteResult r{"ccl", 0.0, instances_per_loss};
        for (int i = 0; i < instances_per_loss; ++i) {
            Rng rng(derive_seed(seed, 2, static_cast<std::uint64_t>(i)));
            const int h = 2 + rng.below(3), w = 2 + rng.below(3), c = 1 + rng.below(3);
            Tensor fixed = random_tensor({h, w, c}, rng);
            Tensor x = random_tensor({h, w, c}, rng);
            auto f = [&](const Tensor& t) {
                std::vector<Tensor> xs{t}, as{fixed};
                return ccl_loss_from_features(xs, as);
            };
            r.max_error = std::max(r.max_error, grad_check(f, x));
        }
        results.push_back(r);
    }
    {
        GradSuiteResult r{"cwcl", 0.0, instances_per_loss};
        for (int i = 0; i < instances_per_loss; ++i) {
            Tensor f_orig, f_aug;
            LabelMap y;
            ProjectionHead head;
            int h = 0, w = 0, c = 0;
            for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
                Rng rng(derive_seed(derive_seed(seed, 3, static_cast<std::uint64_t>(i)),
                                    static_cast<std::uint64_t>(attempt)));
                h = 3 + rng.below(2);
                w = 3 + rng.below(2);
                c = 2 + rng.below(2);
                f_orig = random_tensor({h, w, c}, rng);
                f_aug = random_tensor({h, w, c}, rng);
                y = random_labels(h, w, 3, rng);
                Rng head_rng(derive_seed(derive_seed(seed, 31, static_cast<std::uint64_t>(i)),
                                         static_cast<std::uint64_t>(attempt)));
                head = ProjectionHead::init(c, 4 + static_cast<int>(i % 3), head_rng);
                if (projection_margin_ok(f_orig, head, kSmoothMargin) &&
                    projection_margin_ok(f_aug, head, kSmoothMargin))
                    break;
            }
            CwclConfig cfg;
            cfg.negatives_per_class = 3;
            const std::uint64_t sampler_seed = derive_seed(seed, 32, static_cast<std::uint64_t>(i));

            // rotate the differentiation target: augmented features, original
            // features, first head layer
            const int target = i % 3;
            auto loss_with = [&](const Tensor& t) {
                ProjectionHead h2 = head;
                Tensor fo = f_orig, fa = f_aug;
                if (target == 0)
                    fa = t;
                else if (target == 1)
                    fo = t;
                else
                    h2.w1 = t;
                std::vector<Tensor> fos{fo}, fas{fa};
                std::vector<ProjectionHead> heads{h2};
                Rng s(sampler_seed);
                return cwcl_loss(fos, fas, y, heads, cfg, 0.1, s);
            };
            Tensor x = target == 0 ? f_aug.clone() : (target == 1 ? f_orig.clone() : head.w1.clone());
            r.max_error = std::max(r.max_error, grad_check(loss_with, x));
        }
        results.push_back(r);
    }
    {
        GradSuiteResult r{"sdcl", 0.0, instances_per_loss};
        for (int i = 0; i < instances_per_loss; ++i) {
            Tensor f_orig, f_aug;
            LabelMap y, pred;
            ProjectionHead head;
            for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
                Rng rng(derive_seed(derive_seed(seed, 4, static_cast<std::uint64_t>(i)),
                                    static_cast<std::uint64_t>(attempt)));
                const int h = 3 + rng.below(2), w = 3 + rng.below(2), c = 2 + rng.below(2);
                f_orig = random_tensor({h, w, c}, rng);
                f_aug = random_tensor({h, w, c}, rng);
                y = random_labels(h, w, 3, rng);
                pred = random_labels(h, w, 3, rng);
                Rng head_rng(derive_seed(derive_seed(seed, 41, static_cast<std::uint64_t>(i)),
                                         static_cast<std::uint64_t>(attempt)));
                head = ProjectionHead::init(c, 4 + static_cast<int>(i % 3), head_rng);
                if (projection_margin_ok(f_orig, head, kSmoothMargin) &&
                    projection_margin_ok(f_aug, head, kSmoothMargin))
                    break;
            }
            SdclConfig cfg;
            cfg.anchors_per_image = 4;
            cfg.negatives_per_anchor = 3;
            const std::uint64_t sampler_seed = derive_seed(seed, 42, static_cast<std::uint64_t>(i));

            const int target = i % 2;
            auto loss_with = [&](const Tensor& t) {
                Tensor fo = f_orig, fa = f_aug;
                if (target == 0)
                    fa = t;
                else
                    fo = t;
                std::vector<Tensor> fos{fo}, fas{fa};
                std::vector<ProjectionHead> heads{head};
                Rng s(sampler_seed);
                return sdcl_loss(fos, fas, y, pred, heads, cfg, 0.1, s);
            };
            Tensor x = target == 0 ? f_aug.clone() : f_orig.clone();
            r.max_error = std::max(r.max_error, grad_check(loss_with, x));
        }
        results.push_back(r);
    }
    {
        GradSuiteResult r{"cross_entropy", 0.0, instances_per_loss};
        for (int i = 0; i < instances_per_loss; ++i) {
            Rng rng(derive_seed(seed, 5, static_cast<std::uint64_t>(i)));
            const int h = 2 + rng.below(3), w = 2 + rng.below(3), c = 2 + rng.below(3);
            LabelMap y = random_labels(h, w, c, rng);
            Tensor logits = random_tensor({h, w, c}, rng, -2, 2);
            auto f = [&](const Tensor& t) { return cross_entropy(t, y); };
            r.max_error = std::max(r.max_error, grad_check(f, logits));
        }
        results.push_back(r);
    }
    {
        GradSuiteResult r{"info_nce", 0.0, instances_per_loss};
        for (int i = 0; i < instances_per_loss; ++i) {
            Rng rng(derive_seed(seed, 6, static_cast<std::uint64_t>(i)));
            const int d = 2 + rng.below(5);
            Tensor pos = random_tensor({d}, rng);
            std::vector<Tensor> negs;
            for (int k = 0; k < 1 + rng.below(4); ++k) negs.push_back(random_tensor({d}, rng));
            auto f = [&](const Tensor& t) {
                ContrastiveBatch b;
                b.anchor = t;
                b.positive = pos;
                b.negatives = negs;
                return info_nce(b, 0.2);
            };
            r.max_error = std::max(r.max_error, grad_check(f, random_tensor({d}, rng)));
        }
        results.push_back(r);
    }
    return results;
}

}  // namespace blindloss
