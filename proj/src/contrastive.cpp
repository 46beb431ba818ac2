#include "blindloss/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <utility>

namespace blindloss {

namespace {

Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (double& x : v) x = rng.uniform(-bound, bound);
    return Tensor::from(std::move(shape), std::move(v));
}

bool is_zero_row(std::span<const double> row) {
    for (double v : row)
        if (v != 0.0) return false;
    return true;
}

}  // namespace

ProjectionHead ProjectionHead::init(int in_dim, int embed_dim, Rng& rng) {
    if (in_dim <= 0 || embed_dim <= 0)
        throw ContractViolation("ProjectionHead: dimensions must be positive");
    ProjectionHead head;
    head.in_dim = in_dim;
    head.embed_dim = embed_dim;
    head.w1 = uniform_tensor({in_dim, embed_dim}, 1.0 / std::sqrt(static_cast<double>(in_dim)), rng);
    head.b1 = Tensor::zeros({embed_dim});
    head.w2 = uniform_tensor({embed_dim, embed_dim}, 1.0 / std::sqrt(static_cast<double>(embed_dim)), rng);
    head.b2 = Tensor::zeros({embed_dim});
    head.w1.set_requires_grad(true);
    head.b1.set_requires_grad(true);
    head.w2.set_requires_grad(true);
    head.b2.set_requires_grad(true);
    return head;
}

ProjectionHead ProjectionHead::detached() const {
    ProjectionHead head;
    head.in_dim = in_dim;
    head.embed_dim = embed_dim;
    head.w1 = w1.detach();
    head.b1 = b1.detach();
    head.w2 = w2.detach();
    head.b2 = b2.detach();
    return head;
}

Tensor project_rows(const ProjectionHead& head, const Tensor& rows, bool normalize) {
    if (!rows.defined() || rows.rank() != 2 || rows.dim(1) != head.in_dim)
        throw ContractViolation("project_rows: expected (k, " + std::to_string(head.in_dim) +
                                ") input, got " +
                                (rows.defined() ? shape_str(rows.shape()) : std::string("undefined")));
    const int k = rows.dim(0);
    Tensor hidden = relu(add(matmul(rows, head.w1), tile_rows(head.b1, k)));
    Tensor out = add(matmul(hidden, head.w2), tile_rows(head.b2, k));
    return normalize ? l2_normalize_rows(out) : out;
}

Tensor project(const ProjectionHead& head, const Tensor& feature_vector, bool normalize) {
    if (!feature_vector.defined() || feature_vector.rank() != 1)
        throw ContractViolation("project: expected a rank-1 feature vector");
    Tensor rows = reshape(feature_vector, {1, feature_vector.dim(0)});
    return reshape(project_rows(head, rows, normalize), {head.embed_dim});
}

Tensor info_nce(const ContrastiveBatch& batch, double tau) {
    if (tau <= 0) throw ContractViolation("info_nce: temperature must be positive");
    if (!batch.anchor.defined() || !batch.positive.defined())
        throw ContractViolation("info_nce: anchor and positive must be defined");
    if (batch.negatives.empty()) throw ContractViolation("info_nce: at least one negative required");
    const int d = batch.anchor.dim(0);
    if (batch.positive.dim(0) != d) throw ContractViolation("info_nce: embedding size mismatch");
    for (const Tensor& n : batch.negatives)
        if (!n.defined() || n.rank() != 1 || n.dim(0) != d)
            throw ContractViolation("info_nce: embedding size mismatch");

    std::vector<Tensor> candidates;
    candidates.reserve(batch.negatives.size() + 1);
    candidates.push_back(batch.positive);
    for (const Tensor& n : batch.negatives) candidates.push_back(n);
    Tensor cand = stack_rows(candidates);                                // (1+N, d)
    Tensor sims = reshape(matmul(reshape(batch.anchor, {1, d}), transpose(cand)),
                          {static_cast<int>(candidates.size())});       // (1+N)
    Tensor scaled = div(sims, tau);
    Tensor lse = logsumexp_rows(reshape(scaled, {1, static_cast<int>(candidates.size())}));
    return sub(lse, gather(scaled, {0}));
}

// ---- candidate pools ---------------------------------------------------------

std::vector<PixelSample> class_positions(const LabelMap& y, int cls) {
    std::vector<PixelSample> out;
    for (int r = 0; r < y.height; ++r)
        for (int c = 0; c < y.width; ++c)
            if (y.at(r, c) == cls) out.push_back({r, c});
    return out;
}

std::vector<PixelSample> other_class_positions(const LabelMap& y, int cls) {
    std::vector<PixelSample> out;
    for (int r = 0; r < y.height; ++r)
        for (int c = 0; c < y.width; ++c)
            if (y.at(r, c) != cls) out.push_back({r, c});
    return out;
}

std::vector<PixelSample> same_class_positions_excluding(const LabelMap& y, int cls, int exclude_row,
                                                        int exclude_col) {
    std::vector<PixelSample> out;
    for (int r = 0; r < y.height; ++r)
        for (int c = 0; c < y.width; ++c)
            if (y.at(r, c) == cls && !(r == exclude_row && c == exclude_col)) out.push_back({r, c});
    return out;
}

std::vector<PixelSample> error_positions(const ErrorMask& mask) {
    std::vector<PixelSample> out;
    for (int r = 0; r < mask.height; ++r)
        for (int c = 0; c < mask.width; ++c)
            if (mask.at(r, c)) out.push_back({r, c});
    return out;
}

// ---- position-level sampling ----------------------------------------------------

namespace {

std::vector<PixelSample> draw_from_pool(const std::vector<PixelSample>& pool, int count, Rng& rng) {
    std::vector<PixelSample> out;
    out.reserve(static_cast<std::size_t>(count));
    const int n = static_cast<int>(pool.size());
    if (n >= count) {
        for (int i : rng.choose(n, count)) out.push_back(pool[static_cast<std::size_t>(i)]);
    } else {
        // pool shorter than requested: fall back to drawing with replacement
        for (int i = 0; i < count; ++i) out.push_back(pool[static_cast<std::size_t>(rng.below(n))]);
    }
    return out;
}

}  // namespace

std::vector<CwclDraw> sample_cwcl_positions(const LabelMap& y, const CwclConfig& cfg, Rng& rng) {
    if (cfg.classes_per_image < 1 || cfg.anchors_per_class < 1 || cfg.negatives_per_class < 1)
        throw ContractViolation("sample_cwcl: counts must be >= 1");

    std::map<int, std::vector<PixelSample>> by_class;
    for (int r = 0; r < y.height; ++r)
        for (int c = 0; c < y.width; ++c) by_class[y.at(r, c)].push_back({r, c});

    if (by_class.size() < 2) return {};  // single-class image: no negatives exist

    std::vector<int> present;
    present.reserve(by_class.size());
    for (const auto& [cls, _] : by_class) present.push_back(cls);

    std::vector<int> selected;
    if (static_cast<int>(present.size()) > cfg.classes_per_image) {
        for (int i : rng.choose(static_cast<int>(present.size()), cfg.classes_per_image))
            selected.push_back(present[static_cast<std::size_t>(i)]);
        std::sort(selected.begin(), selected.end());
    } else {
        selected = present;
    }

    std::vector<CwclDraw> draws;
    for (int cls : selected) {
        const auto& anchors_pool = by_class[cls];
        std::vector<PixelSample> negatives_pool = other_class_positions(y, cls);
        if (negatives_pool.empty()) continue;

        std::vector<int> anchor_idx =
            rng.choose(static_cast<int>(anchors_pool.size()), cfg.anchors_per_class);
        std::sort(anchor_idx.begin(), anchor_idx.end());
        for (int ai : anchor_idx) {
            CwclDraw draw;
            draw.anchor = anchors_pool[static_cast<std::size_t>(ai)];
            draw.anchor_class = cls;
            draw.negatives = draw_from_pool(negatives_pool, cfg.negatives_per_class, rng);
            draws.push_back(std::move(draw));
        }
    }
    return draws;
}

std::vector<SdclDraw> sample_sdcl_positions(const LabelMap& y, const LabelMap& prediction,
                                            const ErrorMask& mask, const SdclConfig& cfg, Rng& rng) {
    if (cfg.anchors_per_image < 1 || cfg.negatives_per_anchor < 1)
        throw ContractViolation("sample_sdcl: counts must be >= 1");
    if (y.height != prediction.height || y.width != prediction.width || y.height != mask.height ||
        y.width != mask.width)
        throw ContractViolation("sample_sdcl: grids must have matching shape");

    std::vector<PixelSample> errors = error_positions(mask);
    if (errors.empty()) return {};

    std::vector<int> anchor_idx = rng.choose(static_cast<int>(errors.size()), cfg.anchors_per_image);
    std::sort(anchor_idx.begin(), anchor_idx.end());

    std::vector<SdclDraw> draws;
    for (int ai : anchor_idx) {
        const PixelSample anchor = errors[static_cast<std::size_t>(ai)];
        const int predicted = prediction.at(anchor.row, anchor.col);
        std::vector<PixelSample> pool =
            same_class_positions_excluding(y, predicted, anchor.row, anchor.col);
        if (pool.empty()) continue;  // misclassified class has no ground-truth pixels

        SdclDraw draw;
        draw.anchor = anchor;
        draw.true_class = y.at(anchor.row, anchor.col);
        draw.predicted_class = predicted;
        draw.negatives = draw_from_pool(pool, cfg.negatives_per_anchor, rng);
        draws.push_back(std::move(draw));
    }
    return draws;
}

// ---- embedding-level samplers -----------------------------------------------------

namespace {

void check_feature_grid(const Tensor& feat, const LabelMap& y, const char* op) {
    if (!feat.defined() || feat.rank() != 3)
        throw ContractViolation(std::string(op) + ": expected (H, W, C) features");
    if (feat.dim(0) != y.height || feat.dim(1) != y.width)
        throw ContractViolation(std::string(op) + ": feature/label shape mismatch");
}

Tensor pixel_vector(const Tensor& feat, int r, int c) {
    const int w = feat.dim(1), ch = feat.dim(2);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(ch));
    const std::int64_t base = (static_cast<std::int64_t>(r) * w + c) * ch;
    for (int j = 0; j < ch; ++j) idx[static_cast<std::size_t>(j)] = base + j;
    return gather(feat, idx);
}

}  // namespace

std::vector<ContrastiveBatch> sample_cwcl(const Tensor& feat, const Tensor& feat_aug, const LabelMap& y,
                                          const ProjectionHead& head, const CwclConfig& cfg, Rng& rng,
                                          bool normalize) {
    check_feature_grid(feat, y, "sample_cwcl");
    check_feature_grid(feat_aug, y, "sample_cwcl");
    std::vector<CwclDraw> draws = sample_cwcl_positions(y, cfg, rng);

    std::vector<ContrastiveBatch> batches;
    for (const CwclDraw& draw : draws) {
        ContrastiveBatch batch;
        batch.anchor = project(head, pixel_vector(feat_aug, draw.anchor.row, draw.anchor.col), normalize);
        batch.positive = project(head, pixel_vector(feat, draw.anchor.row, draw.anchor.col), normalize);
        if (is_zero_row(batch.anchor.data()) || is_zero_row(batch.positive.data())) continue;
        batch.anchor_position = draw.anchor;
        batch.anchor_class = draw.anchor_class;
        for (const PixelSample& n : draw.negatives) {
            Tensor e = project(head, pixel_vector(feat, n.row, n.col), normalize);
            if (is_zero_row(e.data())) continue;  // degenerate embedding, excluded
            batch.negatives.push_back(std::move(e));
            batch.negative_positions.push_back(n);
            batch.negative_classes.push_back(y.at(n.row, n.col));
        }
        if (!batch.negatives.empty()) batches.push_back(std::move(batch));
    }
    return batches;
}

std::vector<ContrastiveBatch> sample_sdcl(const Tensor& feat, const Tensor& feat_aug, const LabelMap& y,
                                          const LabelMap& prediction, const ErrorMask& mask,
                                          const ProjectionHead& head, const SdclConfig& cfg, Rng& rng,
                                          bool normalize) {
    check_feature_grid(feat, y, "sample_sdcl");
    check_feature_grid(feat_aug, y, "sample_sdcl");
    std::vector<SdclDraw> draws = sample_sdcl_positions(y, prediction, mask, cfg, rng);

    std::vector<ContrastiveBatch> batches;
    for (const SdclDraw& draw : draws) {
        ContrastiveBatch batch;
        batch.anchor = project(head, pixel_vector(feat_aug, draw.anchor.row, draw.anchor.col), normalize);
        batch.positive = project(head, pixel_vector(feat, draw.anchor.row, draw.anchor.col), normalize);
        if (is_zero_row(batch.anchor.data()) || is_zero_row(batch.positive.data())) continue;
        batch.anchor_position = draw.anchor;
        batch.anchor_class = draw.true_class;
        batch.anchor_predicted_class = draw.predicted_class;
        for (const PixelSample& n : draw.negatives) {
            Tensor e = project(head, pixel_vector(feat_aug, n.row, n.col), normalize);
            if (is_zero_row(e.data())) continue;
            batch.negatives.push_back(std::move(e));
            batch.negative_positions.push_back(n);
            batch.negative_classes.push_back(y.at(n.row, n.col));
        }
        if (!batch.negatives.empty()) batches.push_back(std::move(batch));
    }
    return batches;
}

// ---- batched loss path --------------------------------------------------------------

namespace {

// InfoNCE over gathered projection matrices: row `anchor_row` of `anchors`
// against row `positive_row` of `positives` plus rows
// [seg_begin, seg_begin + seg_count) of `negatives`. Fused so the per-draw
// tape cost stays flat.
Tensor segment_info_nce(const Tensor& anchors, int anchor_row, const Tensor& positives,
                        int positive_row, const Tensor& negatives, int seg_begin, int seg_count,
                        double tau) {
    const int d = anchors.dim(1);
    const double* a = anchors.data().data() + static_cast<std::ptrdiff_t>(anchor_row) * d;

    std::vector<double> sims(static_cast<std::size_t>(seg_count) + 1);
    {
        const double* p = positives.data().data() + static_cast<std::ptrdiff_t>(positive_row) * d;
        double s = 0;
        for (int j = 0; j < d; ++j) s += a[j] * p[j];
        sims[0] = s / tau;
    }
    for (int k = 0; k < seg_count; ++k) {
        const double* p = negatives.data().data() + static_cast<std::ptrdiff_t>(seg_begin + k) * d;
        double s = 0;
        for (int j = 0; j < d; ++j) s += a[j] * p[j];
        sims[static_cast<std::size_t>(k) + 1] = s / tau;
    }
    double m = sims[0];
    for (double s : sims) m = std::max(m, s);
    double z = 0;
    for (double s : sims) z += std::exp(s - m);
    const double lse = m + std::log(z);
    const double loss = lse - sims[0];

    Tensor out = Tensor::scalar(loss);
    const bool track =
        anchors.requires_grad() || positives.requires_grad() || negatives.requires_grad();
    if (Tape::active() != nullptr && track) {
        out.set_requires_grad(true);
        auto an = anchors.node();
        auto pn = positives.node();
        auto nn = negatives.node();
        auto on = out.node();
        std::vector<double> probs(sims.size());
        for (std::size_t k = 0; k < sims.size(); ++k) probs[k] = std::exp(sims[k] - lse);
        Tape::active()->record(out, [an, pn, nn, on, probs = std::move(probs), anchor_row,
                                     positive_row, seg_begin, seg_count, d, tau]() {
            const double g = on->grad[0] / tau;
            const double* av = an->data.data() + static_cast<std::ptrdiff_t>(anchor_row) * d;
            double* ga = an->requires_grad
                             ? an->grad.data() + static_cast<std::ptrdiff_t>(anchor_row) * d
                             : nullptr;
            {
                const double w = (probs[0] - 1.0) * g;
                const double* pv = pn->data.data() + static_cast<std::ptrdiff_t>(positive_row) * d;
                if (ga != nullptr)
                    for (int j = 0; j < d; ++j) ga[j] += w * pv[j];
                if (pn->requires_grad) {
                    double* gp = pn->grad.data() + static_cast<std::ptrdiff_t>(positive_row) * d;
                    for (int j = 0; j < d; ++j) gp[j] += w * av[j];
                }
            }
            for (int k = 0; k < seg_count; ++k) {
                const double w = probs[static_cast<std::size_t>(k) + 1] * g;
                const double* nv = nn->data.data() + static_cast<std::ptrdiff_t>(seg_begin + k) * d;
                if (ga != nullptr)
                    for (int j = 0; j < d; ++j) ga[j] += w * nv[j];
                if (nn->requires_grad) {
                    double* gn = nn->grad.data() + static_cast<std::ptrdiff_t>(seg_begin + k) * d;
                    for (int j = 0; j < d; ++j) gn[j] += w * av[j];
                }
            }
        });
    }
    return out;
}

int flat_index(const PixelSample& p, int width) { return p.row * width + p.col; }

struct BlockContribution {
    Tensor mean_loss;
    bool present = false;
};

// Shared assembly for both contrastive losses: project every sampled pixel of
// a block once, then run the fused InfoNCE per draw. Anchors come from
// `anchor_src`, positives from `positive_src` at the anchor pixel, negatives
// from `negative_src`.
template <typename Draws>
BlockContribution block_loss(const Draws& draws, const Tensor& anchor_src, const Tensor& positive_src,
                             const Tensor& negative_src, const ProjectionHead& head, int width,
                             int channels, double tau, bool normalize) {
    BlockContribution out;
    if (draws.empty()) return out;

    std::vector<int> anchor_rows, negative_rows;
    std::vector<std::pair<int, int>> segments;  // (begin, count) into negative_rows
    anchor_rows.reserve(draws.size());
    for (const auto& draw : draws) {
        anchor_rows.push_back(flat_index(draw.anchor, width));
        const int begin = static_cast<int>(negative_rows.size());
        for (const PixelSample& n : draw.negatives) negative_rows.push_back(flat_index(n, width));
        segments.emplace_back(begin, static_cast<int>(negative_rows.size()) - begin);
    }

    const int hw = anchor_src.dim(0) * anchor_src.dim(1);
    Tensor anchors =
        project_rows(head, gather_rows(reshape(anchor_src, {hw, channels}), anchor_rows), normalize);
    Tensor positives =
        project_rows(head, gather_rows(reshape(positive_src, {hw, channels}), anchor_rows), normalize);
    Tensor negs = project_rows(
        head, gather_rows(reshape(negative_src, {hw, channels}), negative_rows), normalize);

    Tensor total;
    int used = 0;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        // degenerate (zero) anchor or positive rows are excluded
        const double* arow = anchors.data().data() + static_cast<std::ptrdiff_t>(i) * head.embed_dim;
        const double* prow = positives.data().data() + static_cast<std::ptrdiff_t>(i) * head.embed_dim;
        if (is_zero_row({arow, static_cast<std::size_t>(head.embed_dim)}) ||
            is_zero_row({prow, static_cast<std::size_t>(head.embed_dim)}))
            continue;
        Tensor one = segment_info_nce(anchors, static_cast<int>(i), positives, static_cast<int>(i),
                                      negs, segments[i].first, segments[i].second, tau);
        total = total.defined() ? add(total, one) : one;
        ++used;
    }
    if (used == 0) return out;
    out.mean_loss = div(total, static_cast<double>(used));
    out.present = true;
    return out;
}

void check_block_args(std::span<const Tensor> dec_feat, std::span<const Tensor> dec_feat_aug,
                      std::span<const ProjectionHead> heads, double tau, const char* op) {
    if (tau <= 0) throw ContractViolation(std::string(op) + ": temperature must be positive");
    if (dec_feat.size() != dec_feat_aug.size() || dec_feat.size() != heads.size() || dec_feat.empty())
        throw ContractViolation(std::string(op) + ": need matching non-empty block lists");
}

}  // namespace

Tensor cwcl_loss(std::span<const Tensor> dec_feat, std::span<const Tensor> dec_feat_aug,
                 const LabelMap& labels, std::span<const ProjectionHead> heads, const CwclConfig& cfg,
                 double tau, Rng& rng, bool normalize) {
    check_block_args(dec_feat, dec_feat_aug, heads, tau, "cwcl_loss");
    Tensor total;
    for (std::size_t j = 0; j < dec_feat.size(); ++j) {
        const Tensor& f = dec_feat[j];
        const Tensor& fa = dec_feat_aug[j];
        if (!f.defined() || f.rank() != 3 || fa.shape() != f.shape())
            throw ContractViolation("cwcl_loss: block features must be matching (H, W, C) tensors");
        LabelMap yj = resize_labels(labels, f.dim(0), f.dim(1));
        std::vector<CwclDraw> draws = sample_cwcl_positions(yj, cfg, rng);
        BlockContribution block =
            block_loss(draws, fa, f, f, heads[j], f.dim(1), f.dim(2), tau, normalize);
        if (block.present) total = total.defined() ? add(total, block.mean_loss) : block.mean_loss;
    }
    return total.defined() ? total : Tensor::scalar(0.0);
}

Tensor sdcl_loss(std::span<const Tensor> dec_feat, std::span<const Tensor> dec_feat_aug,
                 const LabelMap& labels, const LabelMap& prediction,
                 std::span<const ProjectionHead> heads, const SdclConfig& cfg, double tau, Rng& rng,
                 bool normalize) {
    check_block_args(dec_feat, dec_feat_aug, heads, tau, "sdcl_loss");
    Tensor total;
    for (std::size_t j = 0; j < dec_feat.size(); ++j) {
        const Tensor& f = dec_feat[j];
        const Tensor& fa = dec_feat_aug[j];
        if (!f.defined() || f.rank() != 3 || fa.shape() != f.shape())
            throw ContractViolation("sdcl_loss: block features must be matching (H, W, C) tensors");
        LabelMap yj = resize_labels(labels, f.dim(0), f.dim(1));
        LabelMap pred_j = resize_labels(prediction, f.dim(0), f.dim(1));
        ErrorMask mask = error_mask(pred_j, yj);
        std::vector<SdclDraw> draws = sample_sdcl_positions(yj, pred_j, mask, cfg, rng);
        // anchor and negatives from the augmented features, positive from the original
        BlockContribution block =
            block_loss(draws, fa, f, fa, heads[j], f.dim(1), f.dim(2), tau, normalize);
        if (block.present) total = total.defined() ? add(total, block.mean_loss) : block.mean_loss;
    }
    return total.defined() ? total : Tensor::scalar(0.0);
}

}  // namespace blindloss
