#pragma once

// Independent reference implementations used only by tests. Everything here
// is written with plain scalar loops so it shares no code path with the
// library it checks.

#include <cmath>
#include <cstdint>
#include <set>
#include <utility>
#include <vector>

namespace oracle {

// Plain triple-loop matrix product, row-major.
inline std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b,
                                        int m, int k, int n) {
    std::vector<double> out(static_cast<std::size_t>(m) * static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < m; ++i)
        for (int p = 0; p < k; ++p)
            for (int j = 0; j < n; ++j)
                out[static_cast<std::size_t>(i) * n + j] +=
                    a[static_cast<std::size_t>(i) * k + p] * b[static_cast<std::size_t>(p) * n + j];
    return out;
}

// Per-channel mean over the leading (spatial) dimension of an (hw x c) matrix.
inline std::vector<double> channel_means(const std::vector<double>& flat, int hw, int c) {
    std::vector<double> mu(static_cast<std::size_t>(c), 0.0);
    for (int p = 0; p < hw; ++p)
        for (int j = 0; j < c; ++j) mu[static_cast<std::size_t>(j)] += flat[static_cast<std::size_t>(p) * c + j];
    for (double& v : mu) v /= hw;
    return mu;
}

// Per-channel population standard deviation.
inline std::vector<double> channel_stddevs(const std::vector<double>& flat, int hw, int c) {
    std::vector<double> mu = channel_means(flat, hw, c);
    std::vector<double> sd(static_cast<std::size_t>(c), 0.0);
    for (int p = 0; p < hw; ++p)
        for (int j = 0; j < c; ++j) {
            double d = flat[static_cast<std::size_t>(p) * c + j] - mu[static_cast<std::size_t>(j)];
            sd[static_cast<std::size_t>(j)] += d * d;
        }
    for (double& v : sd) v = std::sqrt(v / hw);
    return sd;
}

// Frobenius norm of the entrywise difference of two equally sized buffers.
inline double frobenius_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

// Softmax cross-entropy for one pixel, direct evaluation.
inline double pixel_ce(const std::vector<double>& logits, int label) {
    double m = logits[0];
    for (double v : logits) m = std::max(m, v);
    double s = 0;
    for (double v : logits) s += std::exp(v - m);
    return -(logits[static_cast<std::size_t>(label)] - m - std::log(s));
}

// All positions whose label differs from `cls` (CWCL negative candidates).
inline std::set<std::pair<int, int>> enumerate_other_class(const std::vector<int>& labels, int h,
                                                           int w, int cls) {
    std::set<std::pair<int, int>> out;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            if (labels[static_cast<std::size_t>(r) * w + c] != cls) out.insert({r, c});
    return out;
}

// All positions whose ground-truth label equals `cls`, minus one excluded
// position (SDCL negative candidates).
inline std::set<std::pair<int, int>> enumerate_same_class(const std::vector<int>& labels, int h,
                                                          int w, int cls, int ex_r, int ex_c) {
    std::set<std::pair<int, int>> out;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            if (labels[static_cast<std::size_t>(r) * w + c] == cls && !(r == ex_r && c == ex_c))
                out.insert({r, c});
    return out;
}

// Confusion counts by direct per-pixel recount.
inline std::vector<std::int64_t> recount_confusion(const std::vector<int>& gt,
                                                   const std::vector<int>& pred, int classes) {
    std::vector<std::int64_t> m(static_cast<std::size_t>(classes) * classes, 0);
    for (std::size_t i = 0; i < gt.size(); ++i)
        m[static_cast<std::size_t>(gt[i]) * classes + pred[i]] += 1;
    return m;
}

}  // namespace oracle
