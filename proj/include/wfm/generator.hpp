#pragma once

#include "wfm/fourier_mixer.hpp"

#include <array>
#include <vector>

namespace wfm {

struct GeneratorConfig {
    int64_t channels = 64;                    ///< C; stage i carries 2^(i-1) C channels
    std::array<int64_t, 4> blocks{2, 2, 2, 2};  ///< L_1..L_4, used by encoder and decoder
    MixerVariant mixer = MixerVariant::WFM;
    int64_t mlp_ratio = 4;
    int64_t mixer_kernel = 3;

    static constexpr int64_t kInputChannels = 4;
    static constexpr int64_t kOutputChannels = 3;
    static constexpr int64_t kHeightDivisor = 32;
    static constexpr int64_t kWidthDivisor = 64;

    int64_t stage_channels(int stage) const { return channels << stage; }

    /// Throws ConfigError on an unusable configuration.
    void validate() const;
    /// Throws PreconditionError naming the divisors when H x W cannot be used.
    void validate_input(int64_t height, int64_t width) const;
};

/// Channel dims and spatial extent of encoder stage `stage` (0-based).
struct StageShape {
    int64_t channels;
    int64_t height;
    int64_t width;
};
std::array<StageShape, 4> stage_shapes(const GeneratorConfig& config, int64_t height,
                                       int64_t width);

/// X' = X + mixer(norm(X)); out = X' + mlp(norm(X')).
class FourierFormerBlockImpl : public torch::nn::Module {
public:
    FourierFormerBlockImpl(int64_t channels, MixerVariant mixer, int64_t mlp_ratio,
                           int64_t mixer_kernel);
    torch::Tensor forward(const torch::Tensor& x);

    /// Zeroes the last layer of both residual branches, turning the block into
    /// the identity.
    void zero_residual_outputs();

    int64_t channels;
    ChannelNorm norm1{nullptr};
    TokenMixer token_mixer{nullptr};
    ChannelNorm norm2{nullptr};
    torch::nn::Conv2d mlp_in{nullptr};
    StarReLU mlp_act{nullptr};
    torch::nn::Conv2d mlp_out{nullptr};
};
TORCH_MODULE(FourierFormerBlock);

struct Encoded {
    torch::Tensor bottleneck;
    std::vector<torch::Tensor> skips;  ///< one per stage, shallowest first
};

class GeneratorImpl : public torch::nn::Module {
public:
    explicit GeneratorImpl(const GeneratorConfig& config);

    Encoded encode(const torch::Tensor& input);
    torch::Tensor decode(const Encoded& encoded);

    /// Runs the network on a prepared 4-channel input.
    torch::Tensor forward(const torch::Tensor& input);

    /// Builds concat(x * (1 - m), m) and runs the network. `image` is N x 3 x H x W
    /// in [0, 1], `mask` N x 1 x H x W with 1 marking holes.
    torch::Tensor generate(const torch::Tensor& image, const torch::Tensor& mask);

    GeneratorConfig config;
    SphericalConv stem{nullptr};
    std::vector<SphericalConv> downsample;             ///< stages 2..4
    std::vector<torch::nn::Sequential> encoder_stages;
    std::vector<torch::nn::Sequential> decoder_stages;
    std::vector<SphericalConv> upsample;               ///< stage i+1 -> i, i = 3, 2, 1
    std::vector<torch::nn::Conv2d> skip_fuse;
    SphericalConv final_upsample{nullptr};
    StarReLU final_act{nullptr};
    torch::nn::Conv2d head{nullptr};
};
TORCH_MODULE(Generator);

/// concat(x * (1 - m), m), validating that `mask` is binary.
torch::Tensor make_generator_input(const torch::Tensor& image, const torch::Tensor& mask);

/// x * (1 - m) + x_hat * m.
torch::Tensor composite(const torch::Tensor& image, const torch::Tensor& inpainted,
                        const torch::Tensor& mask);

/// Throws PreconditionError unless every element is exactly 0 or 1.
void require_binary_mask(const torch::Tensor& mask);

/// Exact trainable-parameter count, computed from layer shapes without
/// allocating the model.
int64_t count_parameters(const GeneratorConfig& config);

/// Sum of numel() over a module's parameters.
int64_t module_parameter_count(const torch::nn::Module& module);

}  // namespace wfm
