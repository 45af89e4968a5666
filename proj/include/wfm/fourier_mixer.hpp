#pragma once

// Fourier Units and the token mixers built from them.
//
// A Fourier Unit takes a real map, transforms it with an orthonormal real FFT
// along one axis (or both), stacks real and imaginary parts on the channel
// axis, applies one pointwise channel map shared by every frequency bin,
// optionally normalizes/activates, and transforms back.

#include "wfm/core_ops.hpp"

#include <string>

namespace wfm {

enum class FourierAxes { Height, Width, Both };

struct FourierUnitOptions {
    int64_t channels = 1;
    FourierAxes axes = FourierAxes::Width;
    bool normalize = true;
    bool activate = true;
};

class FourierUnitImpl : public torch::nn::Module {
public:
    explicit FourierUnitImpl(const FourierUnitOptions& options);

    /// Output has the shape of `x`. Throws NumericError on non-finite input.
    torch::Tensor forward(const torch::Tensor& x);

    /// Skip normalization and activation (linear unit); used by the symmetry
    /// and decomposition analyses.
    void set_bypass(bool bypass);

    FourierUnitOptions options;
    /// [2C_out, 2C_in, 1, 1]; rows/columns ordered (real parts, imaginary parts).
    torch::Tensor weight;
    ChannelNorm norm{nullptr};
    StarReLU act{nullptr};
};
TORCH_MODULE(FourierUnit);

enum class MixerVariant { WFM, FMNoWindow, WFM2D, FFC, GatedOnly };

const char* mixer_name(MixerVariant variant);
/// Accepts wfm, fm_no_window, wfm_2d, ffc, gated_only. Throws ConfigError.
MixerVariant parse_mixer(const std::string& name);

struct TokenMixerOptions {
    int64_t channels = 2;
    MixerVariant variant = MixerVariant::WFM;
    int64_t kernel = 3;
};

/// Local + global two-branch structure of Fast Fourier Convolutions with an
/// even channel split; the global-to-global path is a spectral transform built
/// on a 2D Fourier Unit.
class FfcMixerImpl : public torch::nn::Module {
public:
    FfcMixerImpl(int64_t channels, int64_t kernel);
    torch::Tensor forward(const torch::Tensor& x);

    int64_t half;
    SphericalConv local_to_local{nullptr};
    SphericalConv global_to_local{nullptr};
    SphericalConv local_to_global{nullptr};
    torch::nn::Conv2d spectral_in{nullptr};
    StarReLU spectral_act{nullptr};
    FourierUnit spectral_unit{nullptr};
    torch::nn::Conv2d spectral_out{nullptr};
    StarReLU local_act{nullptr};
    StarReLU global_act{nullptr};
};
TORCH_MODULE(FfcMixer);

/// Token mixer of a FourierFormer block. For the W-FourierMixer:
///
///   r   = reduce(x)                       (gated conv, C -> C/2)
///   b1  = FU_w(r)                         full-map, width transform
///   b2  = FU_h(r)                         full-map, height transform
///   b3  = merge(FU_w(left), FU_w(right))  same unit as b1
///   b4  = merge(FU_h(top),  FU_h(bottom)) same unit as b2
///   out = fuse(concat(b1..b4))            (gated conv, 2C -> C, linear)
///
/// FMNoWindow uses a single window (b3 == b1, b4 == b2), so it has exactly the
/// parameters of WFM. WFM2D uses one 2D unit on the full map and on the four
/// quadrants. GatedOnly drops the Fourier branches. FFC swaps the whole mixer
/// for FfcMixer. An axis whose length is odd at some stage is not windowed.
class TokenMixerImpl : public torch::nn::Module {
public:
    explicit TokenMixerImpl(const TokenMixerOptions& options);
    torch::Tensor forward(const torch::Tensor& x);

    TokenMixerOptions options;
    GatedConv reduce{nullptr};
    FourierUnit unit_width{nullptr};
    FourierUnit unit_height{nullptr};
    FourierUnit unit_2d{nullptr};
    GatedConv fuse{nullptr};
    FfcMixer ffc{nullptr};
};
TORCH_MODULE(TokenMixer);

/// Applies `unit` to each half of `x` along `axis` and stitches the results
/// back; falls back to the full map when that axis has odd length.
torch::Tensor windowed_unit(FourierUnit& unit, const torch::Tensor& x, Axis axis);

/// Exact trainable-parameter count of a Fourier Unit on `channels` input
/// channels.
int64_t fourier_unit_parameter_count(int64_t channels);

/// Exact trainable-parameter count of a token mixer, derived from the layer
/// shapes rather than from an instantiated module.
int64_t token_mixer_parameter_count(const TokenMixerOptions& options);

}  // namespace wfm
