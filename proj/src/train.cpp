#include "blindloss/train.hpp"

#include "blindloss/covariance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <utility>

namespace blindloss {

namespace {
constexpr std::uint64_t kNetTag = 0x4E37ULL;
constexpr std::uint64_t kHeadTag = 0x483DULL;
constexpr std::uint64_t kSdclHeadTag = 0x5D83ULL;
constexpr std::uint64_t kBatchTag = 0xBA7CULL;
constexpr std::uint64_t kJitterTag = 0x71773ULL;
constexpr std::uint64_t kSamplerTag = 0x5A3ULL;
}  // namespace

double poly_lr(int iter, const OptimConfig& cfg) {
    if (iter < 0 || iter > cfg.total_iters)
        throw ContractViolation("poly_lr: iteration " + std::to_string(iter) + " outside [0, " +
                                std::to_string(cfg.total_iters) + "]");
    const double progress = static_cast<double>(iter) / static_cast<double>(cfg.total_iters);
    return cfg.base_lr * std::pow(1.0 - progress, cfg.lr_power);
}

void sgd_update(std::span<double> weights, std::span<const double> grads, std::span<double> velocity,
                double lr, double momentum, double weight_decay) {
    if (weights.size() != grads.size() || weights.size() != velocity.size())
        throw ContractViolation("sgd_update: buffer sizes differ");
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double g = grads[i] + weight_decay * weights[i];
        velocity[i] = momentum * velocity[i] + g;
        weights[i] -= lr * velocity[i];
    }
}

void Optimizer::step(std::vector<NamedParameter>& params, double lr, const OptimConfig& cfg) {
    if (velocity_.empty()) {
        velocity_.reserve(params.size());
        for (const NamedParameter& p : params)
            velocity_.emplace_back(p.value.data().size(), 0.0);
    }
    if (velocity_.size() != params.size())
        throw ContractViolation("Optimizer::step: parameter list changed size");
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& t = params[i].value;
        sgd_update(t.mutable_data(), t.grad(), velocity_[i], lr, cfg.momentum, cfg.weight_decay);
    }
}

Tensor total_loss(const Tensor& ce, const Tensor& cml, const Tensor& ccl, const Tensor& cwcl,
                  const Tensor& sdcl, const LossConfig& cfg) {
    if (!ce.defined()) throw ContractViolation("total_loss: cross-entropy component is required");
    const auto check = [](const Tensor& t, const char* name) {
        if (t.defined() && !std::isfinite(t.value()))
            throw DomainError(std::string("total_loss: non-finite ") + name + " component");
    };
    check(ce, "ce");
    check(cml, "cml");
    check(ccl, "ccl");
    check(cwcl, "cwcl");
    check(sdcl, "sdcl");
    Tensor total = ce;
    if (cml.defined()) total = add(total, mul(cml, cfg.omega1));
    if (ccl.defined()) total = add(total, mul(ccl, cfg.omega2));
    if (cwcl.defined()) total = add(total, mul(cwcl, cfg.omega3));
    if (sdcl.defined()) total = add(total, mul(sdcl, cfg.omega4));
    return total;
}

// ---- metrics ---------------------------------------------------------------------

MetricsReport metrics_from_confusion(std::vector<std::int64_t> confusion, int classes) {
    if (classes < 1 || static_cast<int>(confusion.size()) != classes * classes)
        throw ContractViolation("metrics_from_confusion: bad confusion shape");
    MetricsReport report;
    report.classes = classes;
    report.confusion = std::move(confusion);

    std::int64_t total = 0, correct = 0;
    report.per_class_iou.assign(static_cast<std::size_t>(classes),
                                std::numeric_limits<double>::quiet_NaN());
    double iou_sum = 0;
    int present = 0;
    for (int c = 0; c < classes; ++c) {
        std::int64_t tp = report.confusion[static_cast<std::size_t>(c) * classes + c];
        std::int64_t row = 0, col = 0;
        for (int k = 0; k < classes; ++k) {
            row += report.confusion[static_cast<std::size_t>(c) * classes + k];
            col += report.confusion[static_cast<std::size_t>(k) * classes + c];
        }
        total += row;
        correct += tp;
        const std::int64_t uni = row + col - tp;
        if (uni > 0) report.per_class_iou[static_cast<std::size_t>(c)] = static_cast<double>(tp) / static_cast<double>(uni);
        if (row > 0) {  // class present in ground truth
            iou_sum += static_cast<double>(tp) / static_cast<double>(uni);
            ++present;
        }
    }
    report.miou = present > 0 ? iou_sum / present : 0.0;
    report.pixel_accuracy = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
    return report;
}

double embedding_separation(const Tensor& points, const std::vector<int>& labels) {
    if (!points.defined() || points.rank() != 2 ||
        points.dim(0) != static_cast<int>(labels.size()))
        throw ContractViolation("embedding_separation: points must be (N, D) with one label each");
    const int n = points.dim(0), d = points.dim(1);

    std::map<int, std::vector<int>> by_class;
    for (int i = 0; i < n; ++i) by_class[labels[static_cast<std::size_t>(i)]].push_back(i);
    if (by_class.size() < 2)
        throw ContractViolation("embedding_separation: needs at least 2 classes");
    for (const auto& [cls, members] : by_class)
        if (members.size() < 2)
            throw ContractViolation("embedding_separation: class " + std::to_string(cls) +
                                    " has fewer than 2 samples");

    std::vector<std::vector<double>> centroids;
    double within = 0;
    std::int64_t within_count = 0;
    for (const auto& [cls, members] : by_class) {
        std::vector<double> centroid(static_cast<std::size_t>(d), 0.0);
        for (int i : members)
            for (int k = 0; k < d; ++k)
                centroid[static_cast<std::size_t>(k)] += points.data()[static_cast<std::size_t>(i) * d + k];
        for (double& v : centroid) v /= static_cast<double>(members.size());
        for (int i : members) {
            double dist2 = 0;
            for (int k = 0; k < d; ++k) {
                const double diff = points.data()[static_cast<std::size_t>(i) * d + k] - centroid[static_cast<std::size_t>(k)];
                dist2 += diff * diff;
            }
            within += std::sqrt(dist2);
            ++within_count;
        }
        centroids.push_back(std::move(centroid));
    }
    within /= static_cast<double>(within_count);

    double between = 0;
    int pairs = 0;
    for (std::size_t a = 0; a < centroids.size(); ++a)
        for (std::size_t b = a + 1; b < centroids.size(); ++b) {
            double dist2 = 0;
            for (int k = 0; k < d; ++k) {
                const double diff = centroids[a][static_cast<std::size_t>(k)] - centroids[b][static_cast<std::size_t>(k)];
                dist2 += diff * diff;
            }
            between += std::sqrt(dist2);
            ++pairs;
        }
    between /= static_cast<double>(pairs);
    return between / (within + 1e-8);
}

// ---- training --------------------------------------------------------------------

namespace {

struct HeadSet {
    std::vector<ProjectionHead> cwcl;
    std::vector<ProjectionHead> sdcl;  // individual mode only
};

HeadSet init_heads(const TrainConfig& cfg, const SegmentationNet& net) {
    HeadSet heads;
    if (!cfg.losses.use_cwcl && !cfg.losses.use_sdcl) return heads;
    const NetworkConfig& m = net.config();
    for (int j = 0; j < m.decoder_blocks; ++j) {
        Rng rng(derive_seed(cfg.seed, kHeadTag, static_cast<std::uint64_t>(j)));
        heads.cwcl.push_back(
            ProjectionHead::init(m.decoder_widths[static_cast<std::size_t>(j)], cfg.head.embed_dim, rng));
    }
    if (cfg.losses.use_sdcl && cfg.head.mode == HeadMode::Individual) {
        for (int j = 0; j < m.decoder_blocks; ++j) {
            Rng rng(derive_seed(cfg.seed, kSdclHeadTag, static_cast<std::uint64_t>(j)));
            heads.sdcl.push_back(
                ProjectionHead::init(m.decoder_widths[static_cast<std::size_t>(j)], cfg.head.embed_dim, rng));
        }
    }
    return heads;
}

Tensor accumulate(Tensor& into, const Tensor& value) {
    into = into.defined() ? add(into, value) : value;
    return into;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, std::span<const Scene> train_scenes) {
    if (train_scenes.empty()) throw ContractViolation("train: empty corpus");
    if (cfg.optimizer.total_iters < 1 || cfg.optimizer.batch_size < 1)
        throw ContractViolation("train: iterations and batch size must be >= 1");

    NetworkConfig net_cfg = cfg.model;
    net_cfg.classes = cfg.data.classes;
    net_cfg.height = cfg.data.height;
    net_cfg.width = cfg.data.width;
    net_cfg.seed = derive_seed(cfg.seed, kNetTag);

    TrainResult result{SegmentationNet::init(net_cfg), {}, {}, {}};
    HeadSet heads = init_heads(cfg, result.net);

    const LossConfig& L = cfg.losses;
    const bool need_aug =
        L.use_cml || L.use_ccl || L.use_cwcl || L.use_sdcl || L.ce_on_augmented;
    const int logits_h = result.net.logits_height();
    const int logits_w = result.net.logits_width();

    Optimizer optimizer;
    result.history.reserve(static_cast<std::size_t>(cfg.optimizer.total_iters));

    for (int iter = 0; iter < cfg.optimizer.total_iters; ++iter) {
        Rng batch_rng(derive_seed(cfg.seed, kBatchTag, static_cast<std::uint64_t>(iter)));
        Rng jitter_rng(derive_seed(cfg.seed, kJitterTag, static_cast<std::uint64_t>(iter)));
        Rng sampler_rng(derive_seed(cfg.seed, kSamplerTag, static_cast<std::uint64_t>(iter)));

        Tape tape;
        Tensor ce_sum, cml_sum, ccl_sum, cwcl_sum, sdcl_sum;
        for (int b = 0; b < cfg.optimizer.batch_size; ++b) {
            const Scene& scene = train_scenes[static_cast<std::size_t>(
                batch_rng.below(static_cast<int>(train_scenes.size())))];
            LabelMap labels_at_logits = resize_labels(scene.mask, logits_h, logits_w);

            ForwardResult fwd = result.net.forward(scene.image);
            ForwardResult fwd_aug;
            if (need_aug) {
                Tensor augmented = color_jitter(scene.image, cfg.data.jitter_strength, jitter_rng);
                fwd_aug = result.net.forward(augmented);
            }

            Tensor ce = cross_entropy(fwd.logits, labels_at_logits);
            if (L.ce_on_augmented)
                ce = mul(add(ce, cross_entropy(fwd_aug.logits, labels_at_logits)), 0.5);
            accumulate(ce_sum, ce);

            if (L.use_cml || L.use_ccl) {
                std::vector<std::pair<CovarianceMatrix, CovarianceMatrix>> pairs;
                std::vector<CovarianceMatrix> crosses;
                for (std::size_t i = 0; i < fwd.encoder_features.size(); ++i) {
                    NormalizedFeature nx =
                        instance_normalize(fwd.encoder_features[i], L.instance_norm_eps);
                    NormalizedFeature na =
                        instance_normalize(fwd_aug.encoder_features[i], L.instance_norm_eps);
                    if (L.use_cml)
                        pairs.emplace_back(covariance(nx, L.covariance_normalized),
                                           covariance(na, L.covariance_normalized));
                    if (L.use_ccl)
                        crosses.push_back(cross_covariance(nx, na, L.covariance_normalized));
                }
                if (L.use_cml) accumulate(cml_sum, cml_loss(pairs));
                if (L.use_ccl)
                    accumulate(ccl_sum, L.ccl_form == CclForm::Whitening
                                            ? ccl_whitening_loss(crosses)
                                            : ccl_loss(crosses));
            }

            if (L.use_cwcl) {
                accumulate(cwcl_sum,
                           cwcl_loss(fwd.decoder_features, fwd_aug.decoder_features, scene.mask,
                                     heads.cwcl, cfg.cwcl, L.tau, sampler_rng,
                                     L.normalize_embeddings));
            }
            if (L.use_sdcl) {
                const Tensor& pred_logits =
                    L.sdcl_pred_source == PredSource::Augmented ? fwd_aug.logits : fwd.logits;
                LabelMap prediction = argmax_channels(pred_logits.detach());
                std::vector<ProjectionHead> sdcl_view;
                std::span<const ProjectionHead> sdcl_heads;
                switch (cfg.head.mode) {
                    case HeadMode::Shared:
                        sdcl_heads = heads.cwcl;
                        break;
                    case HeadMode::SharedStopGradient:
                        for (const ProjectionHead& h : heads.cwcl) sdcl_view.push_back(h.detached());
                        sdcl_heads = sdcl_view;
                        break;
                    case HeadMode::Individual:
                        sdcl_heads = heads.sdcl;
                        break;
                }
                accumulate(sdcl_sum,
                           sdcl_loss(fwd.decoder_features, fwd_aug.decoder_features, scene.mask,
                                     prediction, sdcl_heads, cfg.sdcl, L.tau, sampler_rng,
                                     L.normalize_embeddings));
            }
        }

        const double inv_batch = 1.0 / static_cast<double>(cfg.optimizer.batch_size);
        Tensor ce_mean = mul(ce_sum, inv_batch);
        Tensor cml_mean = cml_sum.defined() ? mul(cml_sum, inv_batch) : Tensor{};
        Tensor ccl_mean = ccl_sum.defined() ? mul(ccl_sum, inv_batch) : Tensor{};
        Tensor cwcl_mean = cwcl_sum.defined() ? mul(cwcl_sum, inv_batch) : Tensor{};
        Tensor sdcl_mean = sdcl_sum.defined() ? mul(sdcl_sum, inv_batch) : Tensor{};

        Tensor total;
        try {
            total = total_loss(ce_mean, cml_mean, ccl_mean, cwcl_mean, sdcl_mean, cfg.losses);
        } catch (const DomainError& e) {
            throw DomainError(std::string(e.what()) + " at iteration " + std::to_string(iter));
        }

        const double lr = poly_lr(iter, cfg.optimizer);
        tape.backward(total);

        std::vector<NamedParameter> params = result.net.parameters();
        for (std::size_t j = 0; j < heads.cwcl.size(); ++j) {
            const std::string prefix = "head." + std::to_string(j) + ".";
            params.push_back({prefix + "w1", heads.cwcl[j].w1});
            params.push_back({prefix + "b1", heads.cwcl[j].b1});
            params.push_back({prefix + "w2", heads.cwcl[j].w2});
            params.push_back({prefix + "b2", heads.cwcl[j].b2});
        }
        for (std::size_t j = 0; j < heads.sdcl.size(); ++j) {
            const std::string prefix = "sdcl_head." + std::to_string(j) + ".";
            params.push_back({prefix + "w1", heads.sdcl[j].w1});
            params.push_back({prefix + "b1", heads.sdcl[j].b1});
            params.push_back({prefix + "w2", heads.sdcl[j].w2});
            params.push_back({prefix + "b2", heads.sdcl[j].b2});
        }
        optimizer.step(params, lr, cfg.optimizer);
        for (NamedParameter& p : params) p.value.zero_grad();

        IterationRow row;
        row.iteration = iter;
        row.lr = lr;
        row.losses.ce = ce_mean.value();
        row.losses.cml = cml_mean.defined() ? cml_mean.value() : 0.0;
        row.losses.ccl = ccl_mean.defined() ? ccl_mean.value() : 0.0;
        row.losses.cwcl = cwcl_mean.defined() ? cwcl_mean.value() : 0.0;
        row.losses.sdcl = sdcl_mean.defined() ? sdcl_mean.value() : 0.0;
        row.losses.total = total.value();
        result.history.push_back(row);
    }

    result.heads = std::move(heads.cwcl);
    result.sdcl_heads = std::move(heads.sdcl);
    return result;
}

MetricsReport evaluate(const SegmentationNet& net, std::span<const ProjectionHead> heads,
                       std::span<const Scene> scenes, bool normalize_embeddings,
                       std::uint64_t eval_seed) {
    if (scenes.empty()) throw ContractViolation("evaluate: empty corpus");
    const int classes = net.config().classes;
    std::vector<std::int64_t> confusion(static_cast<std::size_t>(classes) * classes, 0);

    std::vector<double> embedding_rows;
    std::vector<int> embedding_labels;
    int embed_dim = 0;
    constexpr int kSamplesPerClassPerScene = 4;

    NoGradScope eval_only;
    for (const Scene& scene : scenes) {
        ForwardResult fwd = net.forward(scene.image);
        LabelMap pred = argmax_channels(fwd.logits);
        LabelMap pred_full = upscale_labels(pred, scene.mask.height, scene.mask.width);
        for (std::size_t i = 0; i < scene.mask.values.size(); ++i)
            confusion[static_cast<std::size_t>(scene.mask.values[i]) * classes +
                      pred_full.values[i]] += 1;

        // embeddings from the final decoder block
        const Tensor& feat = fwd.decoder_features.back();
        const int fh = feat.dim(0), fw = feat.dim(1), fc = feat.dim(2);
        LabelMap labels_at_block = resize_labels(scene.mask, fh, fw);
        Rng pick_rng(derive_seed(eval_seed, scene.seed));
        Tensor flat = reshape(feat, {fh * fw, fc});
        std::vector<int> chosen_rows;
        std::vector<int> chosen_labels;
        for (int cls = 0; cls < classes; ++cls) {
            std::vector<int> pool;
            for (int i = 0; i < fh * fw; ++i)
                if (labels_at_block.values[static_cast<std::size_t>(i)] == cls) pool.push_back(i);
            if (pool.empty()) continue;
            for (int idx : pick_rng.choose(static_cast<int>(pool.size()), kSamplesPerClassPerScene)) {
                chosen_rows.push_back(pool[static_cast<std::size_t>(idx)]);
                chosen_labels.push_back(cls);
            }
        }
        if (chosen_rows.empty()) continue;
        Tensor gathered = gather_rows(flat, chosen_rows);
        Tensor projected = heads.empty()
                               ? gathered
                               : project_rows(heads.back(), gathered, normalize_embeddings);
        embed_dim = projected.dim(1);
        for (std::size_t i = 0; i < chosen_rows.size(); ++i) {
            const double* row = projected.data().data() + static_cast<std::ptrdiff_t>(i) * embed_dim;
            embedding_rows.insert(embedding_rows.end(), row, row + embed_dim);
            embedding_labels.push_back(chosen_labels[i]);
        }
    }

    MetricsReport report = metrics_from_confusion(std::move(confusion), classes);
    // the separation score needs two classes with two samples each
    std::map<int, int> counts;
    for (int l : embedding_labels) counts[l] += 1;
    int usable = 0;
    for (const auto& [cls, n] : counts)
        if (n >= 2) ++usable;
    if (usable >= 2) {
        std::vector<double> kept_rows;
        std::vector<int> kept_labels;
        for (std::size_t i = 0; i < embedding_labels.size(); ++i) {
            if (counts[embedding_labels[i]] < 2) continue;
            kept_rows.insert(kept_rows.end(), embedding_rows.begin() + static_cast<std::ptrdiff_t>(i) * embed_dim,
                             embedding_rows.begin() + static_cast<std::ptrdiff_t>(i + 1) * embed_dim);
            kept_labels.push_back(embedding_labels[i]);
        }
        Tensor points = Tensor::from({static_cast<int>(kept_labels.size()), embed_dim},
                                     std::move(kept_rows));
        report.separation = embedding_separation(points, kept_labels);
    } else {
        report.separation = 0.0;
    }
    return report;
}

}  // namespace blindloss
