#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "blindloss/label_map.hpp"
#include "blindloss/rng.hpp"
#include "blindloss/tensor.hpp"

namespace blindloss {

struct NetworkConfig {
    int encoder_blocks = 3;
    int decoder_blocks = 2;
    std::vector<int> encoder_widths{6, 10, 14};
    std::vector<int> decoder_widths{10, 8};
    int classes = 5;
    int height = 32;
    int width = 32;
    std::uint64_t seed = 1;
};

// 3x3 convolution, pad 1, as a single recorded operation (im2col + GEMM).
Tensor conv3x3(const Tensor& input /* H x W x Cin */, const Tensor& weight /* 9*Cin x Cout */,
               const Tensor& bias /* Cout */, int stride);

// 1x1 convolution (per-pixel affine map).
Tensor conv1x1(const Tensor& input, const Tensor& weight /* Cin x Cout */, const Tensor& bias);

// Nearest-neighbor 2x spatial upsample.
Tensor upsample2x(const Tensor& input);

struct NamedParameter {
    std::string name;
    Tensor value;
};

struct ForwardResult {
    std::vector<Tensor> encoder_features;  // post-activation, one per block
    std::vector<Tensor> decoder_features;
    Tensor logits;  // H' x W' x classes at the final decoder resolution
};

// Small encoder-decoder pixel classifier. Encoder blocks are stride-2 3x3
// convolutions, decoder blocks upsample 2x then apply a 3x3 convolution, and
// a 1x1 head produces logits. Each block standardizes its channels (learned
// gain/shift) before the ReLU; without that the covariance-alignment losses
// can silently zero out channel variances.
class SegmentationNet {
  public:
    static SegmentationNet init(const NetworkConfig& cfg);

    ForwardResult forward(const Tensor& image) const;

    std::vector<NamedParameter> parameters();
    const NetworkConfig& config() const { return cfg_; }

    // Spatial side length of the logits map (input size / 2^(n_e - n_d)).
    int logits_height() const;
    int logits_width() const;

  private:
    struct ConvLayer {
        Tensor weight, gain, bias;
        int in_ch = 0, out_ch = 0, stride = 1;
    };
    NetworkConfig cfg_;
    std::vector<ConvLayer> encoder_;
    std::vector<ConvLayer> decoder_;
    ConvLayer classifier_;
};

// Mean over pixels of -log softmax(logits)[label], max-shifted.
Tensor cross_entropy(const Tensor& logits /* H x W x C */, const LabelMap& labels /* H x W */);

// Flat binary container: versioned header with tensor names and shapes,
// followed by row-major 64-bit payloads in header order.
void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedParameter>& params);
// Loads into an existing parameter list; every name must resolve and shapes
// must match exactly.
void load_checkpoint(const std::filesystem::path& path, std::vector<NamedParameter>& params);

}  // namespace blindloss
