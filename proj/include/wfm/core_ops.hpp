#pragma once

// Building blocks shared by every network in the library. All tensors are
// batched feature maps laid out N x C x H x W (the "FeatureMap" of the
// design notes is one sample of such a batch).

#include <torch/torch.h>

#include <cstdint>
#include <utility>

namespace wfm {

enum class Axis { Height, Width };

inline int64_t axis_dim(Axis axis) { return axis == Axis::Height ? 2 : 3; }
const char* axis_name(Axis axis);

/// Symmetric padding amounts: pad_h rows above and below, pad_w columns left
/// and right. Valid when pad_h < h and pad_w <= w.
struct PadSpec {
    int64_t pad_h = 0;
    int64_t pad_w = 0;
};

/// Circular padding along the width (longitude wraps) and reflection padding
/// along the height (mirror about the first/last row, which is not repeated).
/// Throws PreconditionError if the pad does not fit the map.
torch::Tensor spherical_pad(const torch::Tensor& x, PadSpec spec);

/// Asymmetric form used by strided convolutions. When `allow_single_row` is
/// set a one-row map is padded by repeating that row, which is what reflection
/// degenerates to on a single sample.
torch::Tensor spherical_pad(const torch::Tensor& x, int64_t top, int64_t bottom,
                            int64_t left, int64_t right, bool allow_single_row = false);

/// Splits a map into two equal windows along `axis`. The axis length must be
/// even.
std::pair<torch::Tensor, torch::Tensor> window_split(const torch::Tensor& x, Axis axis);

/// Inverse of window_split.
torch::Tensor window_merge(const torch::Tensor& a, const torch::Tensor& b, Axis axis);

/// Throws NumericError naming `where` if `t` holds a NaN or Inf.
void ensure_finite(const torch::Tensor& t, const char* where);

/// s * relu(x)^2 + b with learnable scalars s and b.
class StarReLUImpl : public torch::nn::Module {
public:
    explicit StarReLUImpl(double scale = 1.0, double bias = 0.0);
    torch::Tensor forward(const torch::Tensor& x);

    torch::Tensor scale;
    torch::Tensor bias;
};
TORCH_MODULE(StarReLU);

/// Layer normalization across channels at every spatial site; gain only.
class ChannelNormImpl : public torch::nn::Module {
public:
    explicit ChannelNormImpl(int64_t channels, double eps = 1e-6);
    torch::Tensor forward(const torch::Tensor& x);

    torch::Tensor weight;
    double eps;
};
TORCH_MODULE(ChannelNorm);

struct ConvSpec {
    int64_t in_channels = 1;
    int64_t out_channels = 1;
    int64_t kernel = 3;
    int64_t stride = 1;
    int64_t dilation = 1;
    bool bias = false;
};

/// Convolution preceded by spherical padding sized so that the output has
/// ceil(in / stride) samples along each axis.
class SphericalConvImpl : public torch::nn::Module {
public:
    explicit SphericalConvImpl(const ConvSpec& spec);
    torch::Tensor forward(const torch::Tensor& x);

    ConvSpec spec;
    torch::nn::Conv2d conv{nullptr};
};
TORCH_MODULE(SphericalConv);

/// Padding (before, after) along one axis for the ceil(in / stride) rule.
std::pair<int64_t, int64_t> same_padding(int64_t in, int64_t kernel, int64_t stride,
                                         int64_t dilation = 1);

enum class GateActivation { StarReLU, Identity };

struct GatedConvOptions {
    int64_t in_channels = 1;
    int64_t out_channels = 1;
    int64_t kernel = 3;
    int64_t stride = 1;
    GateActivation activation = GateActivation::StarReLU;
};

/// y = act(feature(x)) * sigmoid(gate(x)). The feature branch carries no
/// bias; the gate branch does, so the gate has an adjustable operating point.
class GatedConvImpl : public torch::nn::Module {
public:
    explicit GatedConvImpl(const GatedConvOptions& options);
    torch::Tensor forward(const torch::Tensor& x);

    /// act(feature(x)) without the gate, for tests and diagnostics.
    torch::Tensor feature_response(const torch::Tensor& x);

    GatedConvOptions options;
    torch::nn::Conv2d feature{nullptr};
    torch::nn::Conv2d gate{nullptr};
    StarReLU act{nullptr};

private:
    torch::Tensor pad(const torch::Tensor& x) const;
};
TORCH_MODULE(GatedConv);

}  // namespace wfm
