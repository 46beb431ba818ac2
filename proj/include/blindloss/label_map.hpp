#pragma once

#include <cstdint>
#include <vector>

#include "blindloss/tensor.hpp"

namespace blindloss {

// Integer class-index grid: ground-truth masks, resized labels, predictions.
struct LabelMap {
    int height = 0;
    int width = 0;
    std::vector<int> values;  // row-major

    LabelMap() = default;
    LabelMap(int h, int w, int fill = 0)
        : height(h), width(w), values(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}

    int at(int r, int c) const { return values[static_cast<std::size_t>(r) * width + c]; }
    int& at(int r, int c) { return values[static_cast<std::size_t>(r) * width + c]; }
    std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }

    bool operator==(const LabelMap&) const = default;
};

// Boolean misclassification grid; true where prediction != ground truth.
struct ErrorMask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> values;

    ErrorMask() = default;
    ErrorMask(int h, int w)
        : height(h), width(w), values(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), 0) {}

    bool at(int r, int c) const { return values[static_cast<std::size_t>(r) * width + c] != 0; }
    void set(int r, int c, bool v) { values[static_cast<std::size_t>(r) * width + c] = v ? 1 : 0; }
    bool any() const {
        for (auto v : values)
            if (v) return true;
        return false;
    }
};

// Nearest-neighbor label subsampling: output cell (m, n) takes the label at
// source position (floor(m*H/th), floor(n*W/tw)). Target must not exceed the
// source in either dimension.
LabelMap resize_labels(const LabelMap& y, int target_height, int target_width);

// Per-pixel argmax over the channel dimension of an (H, W, C) logit tensor.
LabelMap argmax_channels(const Tensor& logits);

// Nearest-neighbor upscale of a label grid to (target_height, target_width);
// used to lift a prediction at logits resolution back to image resolution.
LabelMap upscale_labels(const LabelMap& y, int target_height, int target_width);

ErrorMask error_mask(const LabelMap& prediction, const LabelMap& ground_truth);

}  // namespace blindloss
