#include "blindloss/model.hpp"


#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

namespace blindloss {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

namespace {

int conv_out_extent(int in, int stride) { return (in + 2 - 3) / stride + 1; }

// Patch layout: (dy, dx, cin), matching the weight's leading 9*Cin axis.
std::vector<double> im2col(const Tensor& input, int stride, int h_out, int w_out) {
    const int h = input.dim(0), w = input.dim(1), cin = input.dim(2);
    std::vector<double> col(static_cast<std::size_t>(h_out) * w_out * 9 * cin, 0.0);
    const double* in = input.data().data();
    double* out = col.data();
    for (int i = 0; i < h_out; ++i) {
        for (int j = 0; j < w_out; ++j) {
            for (int dy = 0; dy < 3; ++dy) {
                const int r = i * stride + dy - 1;
                for (int dx = 0; dx < 3; ++dx) {
                    const int c = j * stride + dx - 1;
                    if (r >= 0 && r < h && c >= 0 && c < w)
                        std::memcpy(out, in + (static_cast<std::ptrdiff_t>(r) * w + c) * cin,
                                    sizeof(double) * static_cast<std::size_t>(cin));
                    out += cin;
                }
            }
        }
    }
    return col;
}

}  // namespace

Tensor conv3x3(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride) {
    if (!input.defined() || input.rank() != 3) throw ContractViolation("conv3x3: input must be (H, W, Cin)");
    if (stride != 1 && stride != 2) throw ContractViolation("conv3x3: stride must be 1 or 2");
    const int h = input.dim(0), w = input.dim(1), cin = input.dim(2);
    if (!weight.defined() || weight.rank() != 2 || weight.dim(0) != 9 * cin)
        throw ContractViolation("conv3x3: weight must be (9*Cin, Cout)");
    const int cout = weight.dim(1);
    if (!bias.defined() || bias.rank() != 1 || bias.dim(0) != cout)
        throw ContractViolation("conv3x3: bias must be (Cout)");
    const int h_out = conv_out_extent(h, stride), w_out = conv_out_extent(w, stride);
    if (h_out < 1 || w_out < 1) throw ContractViolation("conv3x3: input too small");

    std::vector<double> col = im2col(input, stride, h_out, w_out);
    const int rows = h_out * w_out, k = 9 * cin;
    std::vector<double> out(static_cast<std::size_t>(rows) * cout);
    {
        ConstMatMap cm(col.data(), rows, k);
        ConstMatMap wm(weight.data().data(), k, cout);
        MatMap om(out.data(), rows, cout);
        om.noalias() = cm * wm;
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cout; ++c) out[static_cast<std::size_t>(r) * cout + c] += bias.data()[static_cast<std::size_t>(c)];
    }

    Tensor result = Tensor::from({h_out, w_out, cout}, std::move(out));
    const bool track = input.requires_grad() || weight.requires_grad() || bias.requires_grad();
    if (Tape::active() != nullptr && track) {
        result.set_requires_grad(true);
        auto in_node = input.node();
        auto w_node = weight.node();
        auto b_node = bias.node();
        auto out_node = result.node();
        Tape::active()->record(result, [in_node, w_node, b_node, out_node, col = std::move(col),
                                        stride, h, w, cin, cout, h_out, w_out, rows, k]() {
            ConstMatMap g(out_node->grad.data(), rows, cout);
            if (w_node->requires_grad) {
                ConstMatMap cm(col.data(), rows, k);
                MatMap gw(w_node->grad.data(), k, cout);
                gw.noalias() += cm.transpose() * g;
            }
            if (b_node->requires_grad) {
                for (int r = 0; r < rows; ++r)
                    for (int c = 0; c < cout; ++c)
                        b_node->grad[static_cast<std::size_t>(c)] +=
                            out_node->grad[static_cast<std::size_t>(r) * cout + c];
            }
            if (in_node->requires_grad) {
                RowMat gcol(rows, k);
                ConstMatMap wm(w_node->data.data(), k, cout);
                gcol.noalias() = g * wm.transpose();
                // col2im scatter
                double* gin = in_node->grad.data();
                const double* gc = gcol.data();
                for (int i = 0; i < h_out; ++i) {
                    for (int j = 0; j < w_out; ++j) {
                        for (int dy = 0; dy < 3; ++dy) {
                            const int r = i * stride + dy - 1;
                            for (int dx = 0; dx < 3; ++dx) {
                                const int c = j * stride + dx - 1;
                                if (r >= 0 && r < h && c >= 0 && c < w) {
                                    double* dst = gin + (static_cast<std::ptrdiff_t>(r) * w + c) * cin;
                                    for (int q = 0; q < cin; ++q) dst[q] += gc[q];
                                }
                                gc += cin;
                            }
                        }
                    }
                }
            }
        });
    }
    return result;
}

Tensor conv1x1(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    if (!input.defined() || input.rank() != 3) throw ContractViolation("conv1x1: input must be (H, W, Cin)");
    const int h = input.dim(0), w = input.dim(1), cin = input.dim(2);
    if (!weight.defined() || weight.rank() != 2 || weight.dim(0) != cin)
        throw ContractViolation("conv1x1: weight must be (Cin, Cout)");
    const int cout = weight.dim(1);
    Tensor flat = reshape(input, {h * w, cin});
    Tensor out = add(matmul(flat, weight), tile_rows(bias, h * w));
    return reshape(out, {h, w, cout});
}

Tensor upsample2x(const Tensor& input) {
    if (!input.defined() || input.rank() != 3) throw ContractViolation("upsample2x: input must be (H, W, C)");
    const int h = input.dim(0), w = input.dim(1), c = input.dim(2);
    std::vector<double> out(static_cast<std::size_t>(4) * h * w * c);
    const double* in = input.data().data();
    for (int r = 0; r < 2 * h; ++r) {
        const double* src_row = in + static_cast<std::ptrdiff_t>(r / 2) * w * c;
        double* dst_row = out.data() + static_cast<std::ptrdiff_t>(r) * 2 * w * c;
        for (int q = 0; q < 2 * w; ++q)
            std::memcpy(dst_row + static_cast<std::ptrdiff_t>(q) * c, src_row + static_cast<std::ptrdiff_t>(q / 2) * c,
                        sizeof(double) * static_cast<std::size_t>(c));
    }
    Tensor result = Tensor::from({2 * h, 2 * w, c}, std::move(out));
    if (Tape::active() != nullptr && input.requires_grad()) {
        result.set_requires_grad(true);
        auto in_node = input.node();
        auto out_node = result.node();
        Tape::active()->record(result, [in_node, out_node, h, w, c]() {
            if (!in_node->requires_grad) return;
            for (int r = 0; r < 2 * h; ++r)
                for (int q = 0; q < 2 * w; ++q) {
                    const double* g =
                        out_node->grad.data() + (static_cast<std::ptrdiff_t>(r) * 2 * w + q) * c;
                    double* dst =
                        in_node->grad.data() + (static_cast<std::ptrdiff_t>(r / 2) * w + q / 2) * c;
                    for (int k = 0; k < c; ++k) dst[k] += g[k];
                }
        });
    }
    return result;
}

// ---- SegmentationNet ----------------------------------------------------------

namespace {

// Symmetric uniform with the ReLU-appropriate fan-in gain.
Tensor fan_in_uniform(Shape shape, int fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (double& x : v) x = rng.uniform(-bound, bound);
    Tensor t = Tensor::from(std::move(shape), std::move(v));
    t.set_requires_grad(true);
    return t;
}

// Post-normalization shift; slightly positive so ReLU starts mostly alive.
Tensor bias_init(int n) {
    Tensor t = Tensor::full({n}, 0.05);
    t.set_requires_grad(true);
    return t;
}

Tensor gain_init(int n) {
    Tensor t = Tensor::full({n}, 1.0);
    t.set_requires_grad(true);
    return t;
}

constexpr double kBlockNormEps = 1e-5;

// Per-channel standardization with learned gain/shift between the convolution
// and the ReLU, fused into one recorded operation. Without it the covariance
// losses have a degenerate minimum (drive channel variances to zero and the
// self-covariances match trivially) that a randomly initialized net falls
// into.
Tensor block_norm(const Tensor& conv_out, const Tensor& gain, const Tensor& shift) {
    const int h = conv_out.dim(0), w = conv_out.dim(1), c = conv_out.dim(2);
    const int hw = h * w;
    if (hw < 2) throw ContractViolation("block_norm: needs at least 2 spatial positions");

    std::vector<double> xhat(static_cast<std::size_t>(hw) * c);
    std::vector<double> denom(static_cast<std::size_t>(c));
    const double* x = conv_out.data().data();
    for (int j = 0; j < c; ++j) {
        double mu = 0;
        for (int p = 0; p < hw; ++p) mu += x[static_cast<std::size_t>(p) * c + j];
        mu /= hw;
        double var = 0;
        for (int p = 0; p < hw; ++p) {
            const double d = x[static_cast<std::size_t>(p) * c + j] - mu;
            var += d * d;
        }
        var /= hw;
        const double sigma = std::sqrt(var);
        const double d = sigma > kBlockNormEps ? sigma : kBlockNormEps;
        denom[static_cast<std::size_t>(j)] = sigma > kBlockNormEps ? sigma : -kBlockNormEps;  // sign marks the branch
        const double inv = 1.0 / d;
        for (int p = 0; p < hw; ++p)
            xhat[static_cast<std::size_t>(p) * c + j] = (x[static_cast<std::size_t>(p) * c + j] - mu) * inv;
    }
    std::vector<double> out(xhat.size());
    const double* g = gain.data().data();
    const double* b = shift.data().data();
    for (int p = 0; p < hw; ++p)
        for (int j = 0; j < c; ++j)
            out[static_cast<std::size_t>(p) * c + j] =
                g[j] * xhat[static_cast<std::size_t>(p) * c + j] + b[j];

    Tensor result = Tensor::from({h, w, c}, std::move(out));
    const bool track = conv_out.requires_grad() || gain.requires_grad() || shift.requires_grad();
    if (Tape::active() != nullptr && track) {
        result.set_requires_grad(true);
        auto xn = conv_out.node();
        auto gn = gain.node();
        auto bn = shift.node();
        auto on = result.node();
        Tape::active()->record(result, [xn, gn, bn, on, xhat = std::move(xhat),
                                        denom = std::move(denom), hw, c]() {
            const double* gy = on->grad.data();
            for (int j = 0; j < c; ++j) {
                if (gn->requires_grad || bn->requires_grad) {
                    double sum_gy = 0, sum_gy_xhat = 0;
                    for (int p = 0; p < hw; ++p) {
                        const double v = gy[static_cast<std::size_t>(p) * c + j];
                        sum_gy += v;
                        sum_gy_xhat += v * xhat[static_cast<std::size_t>(p) * c + j];
                    }
                    if (bn->requires_grad) bn->grad[static_cast<std::size_t>(j)] += sum_gy;
                    if (gn->requires_grad) gn->grad[static_cast<std::size_t>(j)] += sum_gy_xhat;
                }
                if (!xn->requires_grad) continue;
                const double gamma = gn->data[static_cast<std::size_t>(j)];
                const double d = std::abs(denom[static_cast<std::size_t>(j)]);
                const bool sigma_branch = denom[static_cast<std::size_t>(j)] > 0;
                double m1 = 0, m2 = 0;
                for (int p = 0; p < hw; ++p) {
                    const double gxh = gy[static_cast<std::size_t>(p) * c + j] * gamma;
                    m1 += gxh;
                    m2 += gxh * xhat[static_cast<std::size_t>(p) * c + j];
                }
                m1 /= hw;
                m2 /= hw;
                const double inv = 1.0 / d;
                for (int p = 0; p < hw; ++p) {
                    const double gxh = gy[static_cast<std::size_t>(p) * c + j] * gamma;
                    const double centered = gxh - m1;
                    const double correction =
                        sigma_branch ? xhat[static_cast<std::size_t>(p) * c + j] * m2 : 0.0;
                    xn->grad[static_cast<std::size_t>(p) * c + j] += (centered - correction) * inv;
                }
            }
        });
    }
    return result;
}

void validate_config(const NetworkConfig& cfg) {
    if (cfg.encoder_blocks < 1 || cfg.decoder_blocks < 1)
        throw ContractViolation("NetworkConfig: block counts must be >= 1");
    if (static_cast<int>(cfg.encoder_widths.size()) != cfg.encoder_blocks ||
        static_cast<int>(cfg.decoder_widths.size()) != cfg.decoder_blocks)
        throw ContractViolation("NetworkConfig: width lists must match block counts");
    for (int v : cfg.encoder_widths)
        if (v <= 0) throw ContractViolation("NetworkConfig: widths must be positive");
    for (int v : cfg.decoder_widths)
        if (v <= 0) throw ContractViolation("NetworkConfig: widths must be positive");
    if (cfg.classes < 2) throw ContractViolation("NetworkConfig: needs at least 2 classes");
    if (cfg.decoder_blocks > cfg.encoder_blocks)
        throw ContractViolation("NetworkConfig: decoder cannot out-upsample the encoder");
    const int factor = 1 << cfg.encoder_blocks;
    if (cfg.height % factor != 0 || cfg.width % factor != 0)
        throw ContractViolation("NetworkConfig: input size must be divisible by 2^encoder_blocks");
    if (cfg.height / factor < 2 || cfg.width / factor < 2)
        throw ContractViolation("NetworkConfig: deepest encoder feature needs >= 2x2 positions");
}

}  // namespace

SegmentationNet SegmentationNet::init(const NetworkConfig& cfg) {
    validate_config(cfg);
    SegmentationNet net;
    net.cfg_ = cfg;
    Rng rng(cfg.seed);

    int channels = 3;
    for (int i = 0; i < cfg.encoder_blocks; ++i) {
        ConvLayer layer;
        layer.in_ch = channels;
        layer.out_ch = cfg.encoder_widths[static_cast<std::size_t>(i)];
        layer.stride = 2;
        layer.weight = fan_in_uniform({9 * layer.in_ch, layer.out_ch}, 9 * layer.in_ch, rng);
        layer.gain = gain_init(layer.out_ch);
        layer.bias = bias_init(layer.out_ch);
        channels = layer.out_ch;
        net.encoder_.push_back(std::move(layer));
    }
    for (int j = 0; j < cfg.decoder_blocks; ++j) {
        ConvLayer layer;
        layer.in_ch = channels;
        layer.out_ch = cfg.decoder_widths[static_cast<std::size_t>(j)];
        layer.stride = 1;
        layer.weight = fan_in_uniform({9 * layer.in_ch, layer.out_ch}, 9 * layer.in_ch, rng);
        layer.gain = gain_init(layer.out_ch);
        layer.bias = bias_init(layer.out_ch);
        channels = layer.out_ch;
        net.decoder_.push_back(std::move(layer));
    }
    net.classifier_.in_ch = channels;
    net.classifier_.out_ch = cfg.classes;
    net.classifier_.weight = fan_in_uniform({channels, cfg.classes}, channels, rng);
    net.classifier_.bias = Tensor::zeros({cfg.classes});
    net.classifier_.bias.set_requires_grad(true);  // logits start uniform
    return net;
}

ForwardResult SegmentationNet::forward(const Tensor& image) const {
    if (!image.defined() || image.rank() != 3 || image.dim(0) != cfg_.height ||
        image.dim(1) != cfg_.width || image.dim(2) != 3)
        throw ContractViolation("forward: image must be (" + std::to_string(cfg_.height) + ", " +
                                std::to_string(cfg_.width) + ", 3)");
    ForwardResult result;
    Tensor x = image;
    for (const ConvLayer& layer : encoder_) {
        Tensor pre = conv3x3(x, layer.weight, Tensor::zeros({layer.out_ch}), layer.stride);
        x = relu(block_norm(pre, layer.gain, layer.bias));
        result.encoder_features.push_back(x);
    }
    for (const ConvLayer& layer : decoder_) {
        Tensor pre = conv3x3(upsample2x(x), layer.weight, Tensor::zeros({layer.out_ch}), layer.stride);
        x = relu(block_norm(pre, layer.gain, layer.bias));
        result.decoder_features.push_back(x);
    }
    result.logits = conv1x1(x, classifier_.weight, classifier_.bias);
    return result;
}

std::vector<NamedParameter> SegmentationNet::parameters() {
    std::vector<NamedParameter> params;
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
        params.push_back({"encoder." + std::to_string(i) + ".weight", encoder_[i].weight});
        params.push_back({"encoder." + std::to_string(i) + ".gain", encoder_[i].gain});
        params.push_back({"encoder." + std::to_string(i) + ".bias", encoder_[i].bias});
    }
    for (std::size_t j = 0; j < decoder_.size(); ++j) {
        params.push_back({"decoder." + std::to_string(j) + ".weight", decoder_[j].weight});
        params.push_back({"decoder." + std::to_string(j) + ".gain", decoder_[j].gain});
        params.push_back({"decoder." + std::to_string(j) + ".bias", decoder_[j].bias});
    }
    params.push_back({"classifier.weight", classifier_.weight});
    params.push_back({"classifier.bias", classifier_.bias});
    return params;
}

int SegmentationNet::logits_height() const {
    return cfg_.height >> (cfg_.encoder_blocks - cfg_.decoder_blocks);
}

int SegmentationNet::logits_width() const {
    return cfg_.width >> (cfg_.encoder_blocks - cfg_.decoder_blocks);
}

// ---- cross entropy ---------------------------------------------------------------

Tensor cross_entropy(const Tensor& logits, const LabelMap& labels) {
    if (!logits.defined() || logits.rank() != 3) throw ContractViolation("cross_entropy: logits must be (H, W, C)");
    const int h = logits.dim(0), w = logits.dim(1), c = logits.dim(2);
    if (labels.height != h || labels.width != w)
        throw ContractViolation("cross_entropy: label grid does not match logits");
    std::vector<std::int64_t> picked(static_cast<std::size_t>(h) * w);
    for (int i = 0; i < h * w; ++i) {
        const int y = labels.values[static_cast<std::size_t>(i)];
        if (y < 0 || y >= c) throw ContractViolation("cross_entropy: label out of range");
        picked[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(i) * c + y;
    }
    Tensor flat = reshape(logits, {h * w, c});
    Tensor lse = logsumexp_rows(flat);
    Tensor taken = gather(flat, picked);
    return mean(sub(lse, taken));
}

// ---- checkpoint io ------------------------------------------------------------------

namespace {
constexpr char kMagic[4] = {'B', 'L', 'W', 'C'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedParameter>& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DomainError("save_checkpoint: cannot open " + path.string());
    out.write(kMagic, 4);
    write_pod(out, kVersion);
    write_pod(out, static_cast<std::uint32_t>(params.size()));
    for (const NamedParameter& p : params) {
        write_pod(out, static_cast<std::uint32_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        const Shape& s = p.value.shape();
        write_pod(out, static_cast<std::uint32_t>(s.size()));
        for (int d : s) write_pod(out, static_cast<std::int64_t>(d));
    }
    for (const NamedParameter& p : params) {
        out.write(reinterpret_cast<const char*>(p.value.data().data()),
                  static_cast<std::streamsize>(p.value.size() * sizeof(double)));
    }
    if (!out) throw DomainError("save_checkpoint: write failed for " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, std::vector<NamedParameter>& params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DomainError("load_checkpoint: cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw DomainError("load_checkpoint: not a weight container: " + path.string());
    const auto version = read_pod<std::uint32_t>(in);
    if (version != kVersion)
        throw DomainError("load_checkpoint: unsupported version " + std::to_string(version));
    const auto count = read_pod<std::uint32_t>(in);

    struct Entry {
        std::string name;
        Shape shape;
    };
    std::vector<Entry> entries;
    entries.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        Entry e;
        const auto name_len = read_pod<std::uint32_t>(in);
        e.name.resize(name_len);
        in.read(e.name.data(), name_len);
        const auto rank = read_pod<std::uint32_t>(in);
        for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(static_cast<int>(read_pod<std::int64_t>(in)));
        entries.push_back(std::move(e));
    }
    std::map<std::string, std::vector<double>> payloads;
    for (const Entry& e : entries) {
        std::vector<double> data(static_cast<std::size_t>(shape_numel(e.shape)));
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(double)));
        payloads.emplace(e.name, std::move(data));
    }
    if (!in) throw DomainError("load_checkpoint: truncated file: " + path.string());

    std::map<std::string, Shape> shapes;
    for (const Entry& e : entries) shapes.emplace(e.name, e.shape);
    for (NamedParameter& p : params) {
        auto it = payloads.find(p.name);
        if (it == payloads.end())
            throw ContractViolation("load_checkpoint: missing tensor '" + p.name + "'");
        if (shapes.at(p.name) != p.value.shape())
            throw ContractViolation("load_checkpoint: shape mismatch for '" + p.name + "'");
        std::copy(it->second.begin(), it->second.end(), p.value.mutable_data().begin());
    }
}

}  // namespace blindloss
