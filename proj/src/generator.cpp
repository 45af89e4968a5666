#include "wfm/generator.hpp"

#include "wfm/error.hpp"

#include <string>

namespace wfm {

void GeneratorConfig::validate() const {
    if (channels < 2 || channels % 2 != 0) {
        throw ConfigError("generator: base channels must be even and >= 2, got " +
                          std::to_string(channels));
    }
    if (mixer == MixerVariant::FFC && channels % 4 != 0) {
        throw ConfigError("generator: the FFC mixer needs base channels divisible by 4");
    }
    for (size_t i = 0; i < blocks.size(); ++i) {
        if (blocks[i] < 1) {
            throw ConfigError("generator: stage " + std::to_string(i + 1) +
                              " needs at least one block, got " + std::to_string(blocks[i]));
        }
    }
    if (mlp_ratio < 1) {
        throw ConfigError("generator: mlp_ratio must be >= 1");
    }
    if (mixer_kernel < 1 || mixer_kernel % 2 == 0) {
        throw ConfigError("generator: mixer kernel must be odd and positive");
    }
}

void GeneratorConfig::validate_input(int64_t height, int64_t width) const {
    if (height < kHeightDivisor || width < kWidthDivisor || height % kHeightDivisor != 0 ||
        width % kWidthDivisor != 0) {
        throw PreconditionError("generator: input " + std::to_string(width) + "x" +
                                std::to_string(height) + " (WxH) unsupported; height must be a "
                                "positive multiple of 32 and width a positive multiple of 64");
    }
}

std::array<StageShape, 4> stage_shapes(const GeneratorConfig& config, int64_t height,
                                       int64_t width) {
    config.validate_input(height, width);
    std::array<StageShape, 4> shapes{};
    for (int i = 0; i < 4; ++i) {
        const int64_t factor = int64_t{1} << (i + 2);
        shapes[static_cast<size_t>(i)] =
            StageShape{config.stage_channels(i), height / factor, width / factor};
    }
    return shapes;
}

FourierFormerBlockImpl::FourierFormerBlockImpl(int64_t channels_, MixerVariant mixer,
                                               int64_t mlp_ratio, int64_t mixer_kernel)
    : channels(channels_) {
    norm1 = register_module("norm1", ChannelNorm(channels));
    token_mixer =
        register_module("token_mixer", TokenMixer(TokenMixerOptions{channels, mixer, mixer_kernel}));
    norm2 = register_module("norm2", ChannelNorm(channels));
    const int64_t hidden = channels * mlp_ratio;
    mlp_in = register_module(
        "mlp_in", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, hidden, 1).bias(false)));
    mlp_act = register_module("mlp_act", StarReLU());
    mlp_out = register_module(
        "mlp_out", torch::nn::Conv2d(torch::nn::Conv2dOptions(hidden, channels, 1).bias(false)));
}

torch::Tensor FourierFormerBlockImpl::forward(const torch::Tensor& x) {
    if (x.dim() != 4 || x.size(1) != channels) {
        throw ConfigError("FourierFormer block: expected " + std::to_string(channels) +
                          " channels, got tensor of shape " + c10::str(x.sizes()));
    }
    auto mixed = x + token_mixer->forward(norm1->forward(x));
    return mixed + mlp_out->forward(mlp_act->forward(mlp_in->forward(norm2->forward(mixed))));
}

void FourierFormerBlockImpl::zero_residual_outputs() {
    torch::NoGradGuard no_grad;
    mlp_out->weight.zero_();
    auto& mixer = *token_mixer;
    if (mixer.options.variant == MixerVariant::FFC) {
        // FFC has no single output layer: zero both output activations.
        for (auto* act : {&mixer.ffc->local_act, &mixer.ffc->global_act}) {
            (*act)->scale.zero_();
            (*act)->bias.zero_();
        }
    } else {
        mixer.fuse->feature->weight.zero_();
    }
}

GeneratorImpl::GeneratorImpl(const GeneratorConfig& config_) : config(config_) {
    config.validate();
    const int64_t c = config.channels;
    stem = register_module(
        "stem", SphericalConv(ConvSpec{GeneratorConfig::kInputChannels, c, 7, 4, 1, false}));
    auto make_stage = [&](int64_t ch, int64_t count) {
        torch::nn::Sequential seq;
        for (int64_t b = 0; b < count; ++b) {
            seq->push_back(FourierFormerBlock(ch, config.mixer, config.mlp_ratio,
                                              config.mixer_kernel));
        }
        return seq;
    };
    for (int i = 0; i < 4; ++i) {
        const int64_t ch = config.stage_channels(i);
        if (i > 0) {
            downsample.push_back(register_module(
                "down" + std::to_string(i + 1),
                SphericalConv(ConvSpec{config.stage_channels(i - 1), ch, 3, 2, 1, false})));
        }
        encoder_stages.push_back(register_module("encoder" + std::to_string(i + 1),
                                                 make_stage(ch, config.blocks[static_cast<size_t>(i)])));
    }
    for (int i = 3; i >= 0; --i) {
        const int64_t ch = config.stage_channels(i);
        decoder_stages.push_back(register_module("decoder" + std::to_string(i + 1),
                                                 make_stage(ch, config.blocks[static_cast<size_t>(i)])));
        if (i > 0) {
            const int64_t lower = config.stage_channels(i - 1);
            upsample.push_back(register_module(
                "up" + std::to_string(i + 1),
                SphericalConv(ConvSpec{ch, lower, 3, 1, 1, false})));
            skip_fuse.push_back(register_module(
                "skip" + std::to_string(i),
                torch::nn::Conv2d(torch::nn::Conv2dOptions(2 * lower, lower, 1).bias(false))));
        }
    }
    final_upsample =
        register_module("up1", SphericalConv(ConvSpec{c, c, 7, 1, 1, false}));
    final_act = register_module("final_act", StarReLU());
    head = register_module(
        "head", torch::nn::Conv2d(
                    torch::nn::Conv2dOptions(c, GeneratorConfig::kOutputChannels, 1).bias(false)));
}

Encoded GeneratorImpl::encode(const torch::Tensor& input) {
    if (input.dim() != 4 || input.size(1) != GeneratorConfig::kInputChannels) {
        throw PreconditionError("generator: expected N x 4 x H x W input, got " +
                                c10::str(input.sizes()));
    }
    config.validate_input(input.size(2), input.size(3));
    Encoded out;
    auto x = stem->forward(input);
    for (size_t i = 0; i < 4; ++i) {
        if (i > 0) {
            x = downsample[i - 1]->forward(x);
        }
        x = encoder_stages[i]->forward(x);
        out.skips.push_back(x);
    }
    out.bottleneck = x;
    return out;
}

namespace {

torch::Tensor nearest_upsample(const torch::Tensor& x, int64_t factor) {
    return torch::nn::functional::interpolate(
        x, torch::nn::functional::InterpolateFuncOptions()
               .scale_factor(std::vector<double>{static_cast<double>(factor),
                                                 static_cast<double>(factor)})
               .mode(torch::kNearest));
}

}  // namespace

torch::Tensor GeneratorImpl::decode(const Encoded& encoded) {
    if (encoded.skips.size() != 4) {
        throw Error("generator: decode expects 4 skip tensors, got " +
                    std::to_string(encoded.skips.size()));
    }
    auto x = encoded.bottleneck;
    for (size_t d = 0; d < 4; ++d) {
        x = decoder_stages[d]->forward(x);
        if (d < 3) {
            const auto& skip = encoded.skips[2 - d];
            x = upsample[d]->forward(nearest_upsample(x, 2));
            if (x.sizes() != skip.sizes()) {
                throw Error("generator: skip shape " + c10::str(skip.sizes()) +
                            " does not match decoder shape " + c10::str(x.sizes()));
            }
            x = skip_fuse[d]->forward(torch::cat({x, skip}, 1));
        }
    }
    x = final_act->forward(final_upsample->forward(nearest_upsample(x, 4)));
    return torch::sigmoid(head->forward(x));
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& input) { return decode(encode(input)); }

torch::Tensor GeneratorImpl::generate(const torch::Tensor& image, const torch::Tensor& mask) {
    return forward(make_generator_input(image, mask));
}

void require_binary_mask(const torch::Tensor& mask) {
    if (!torch::logical_or(mask == 0, mask == 1).all().item<bool>()) {
        throw PreconditionError("mask must be binary (0 = keep, 1 = hole)");
    }
}

torch::Tensor make_generator_input(const torch::Tensor& image, const torch::Tensor& mask) {
    if (image.dim() != 4 || image.size(1) != 3) {
        throw PreconditionError("expected an N x 3 x H x W image, got " + c10::str(image.sizes()));
    }
    if (mask.dim() != 4 || mask.size(1) != 1 || mask.size(0) != image.size(0) ||
        mask.size(2) != image.size(2) || mask.size(3) != image.size(3)) {
        throw PreconditionError("mask shape " + c10::str(mask.sizes()) +
                                " does not match image shape " + c10::str(image.sizes()));
    }
    require_binary_mask(mask);
    auto m = mask.to(image.scalar_type());
    return torch::cat({image * (1 - m), m}, 1);
}

torch::Tensor composite(const torch::Tensor& image, const torch::Tensor& inpainted,
                        const torch::Tensor& mask) {
    auto m = mask.to(image.scalar_type());
    return image * (1 - m) + inpainted * m;
}

int64_t count_parameters(const GeneratorConfig& config) {
    config.validate();
    auto block = [&](int64_t d) {
        return 2 * d                                                         // two norms
               + token_mixer_parameter_count({d, config.mixer, config.mixer_kernel})
               + 2 * d * d * config.mlp_ratio + 2;                           // mlp + act
    };
    const int64_t c = config.channels;
    int64_t total = GeneratorConfig::kInputChannels * c * 49;  // stem
    for (int i = 0; i < 4; ++i) {
        const int64_t d = config.stage_channels(i);
        total += 2 * config.blocks[static_cast<size_t>(i)] * block(d);      // encoder + decoder
        if (i > 0) {
            const int64_t lower = config.stage_channels(i - 1);
            total += 2 * lower * d * 9;    // downsample and upsample convs
            total += 2 * lower * lower;    // skip fusion
        }
    }
    total += c * c * 49 + 2;                         // final upsample conv + act
    total += c * GeneratorConfig::kOutputChannels;  // head
    return total;
}

int64_t module_parameter_count(const torch::nn::Module& module) {
    int64_t n = 0;
    for (const auto& p : module.parameters()) {
        n += p.numel();
    }
    return n;
}

}  // namespace wfm
