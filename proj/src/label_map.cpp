#include "blindloss/label_map.hpp"

namespace blindloss {

LabelMap resize_labels(const LabelMap& y, int target_height, int target_width) {
    if (target_height <= 0 || target_width <= 0)
        throw ContractViolation("resize_labels: target extents must be positive");
    if (target_height > y.height || target_width > y.width)
        throw ContractViolation("resize_labels: target larger than source");
    LabelMap out(target_height, target_width);
    for (int m = 0; m < target_height; ++m) {
        const int src_r = static_cast<int>((static_cast<std::int64_t>(m) * y.height) / target_height);
        for (int n = 0; n < target_width; ++n) {
            const int src_c = static_cast<int>((static_cast<std::int64_t>(n) * y.width) / target_width);
            out.at(m, n) = y.at(src_r, src_c);
        }
    }
    return out;
}

LabelMap argmax_channels(const Tensor& logits) {
    if (!logits.defined() || logits.rank() != 3)
        throw ContractViolation("argmax_channels: expected an (H, W, C) tensor");
    const int h = logits.dim(0), w = logits.dim(1), c = logits.dim(2);
    LabelMap out(h, w);
    const double* d = logits.data().data();
    for (int r = 0; r < h; ++r)
        for (int q = 0; q < w; ++q) {
            const double* px = d + (static_cast<std::ptrdiff_t>(r) * w + q) * c;
            int best = 0;
            for (int k = 1; k < c; ++k)
                if (px[k] > px[best]) best = k;
            out.at(r, q) = best;
        }
    return out;
}

LabelMap upscale_labels(const LabelMap& y, int target_height, int target_width) {
    if (target_height < y.height || target_width < y.width)
        throw ContractViolation("upscale_labels: target smaller than source");
    LabelMap out(target_height, target_width);
    for (int m = 0; m < target_height; ++m) {
        const int src_r = static_cast<int>((static_cast<std::int64_t>(m) * y.height) / target_height);
        for (int n = 0; n < target_width; ++n) {
            const int src_c = static_cast<int>((static_cast<std::int64_t>(n) * y.width) / target_width);
            out.at(m, n) = y.at(src_r, src_c);
        }
    }
    return out;
}

ErrorMask error_mask(const LabelMap& prediction, const LabelMap& ground_truth) {
    if (prediction.height != ground_truth.height || prediction.width != ground_truth.width)
        throw ContractViolation("error_mask: shape mismatch");
    ErrorMask m(prediction.height, prediction.width);
    for (std::size_t i = 0; i < prediction.values.size(); ++i)
        m.values[i] = prediction.values[i] != ground_truth.values[i] ? 1 : 0;
    return m;
}

}  // namespace blindloss
