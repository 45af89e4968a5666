#include "wfm/adversarial.hpp"

#include "wfm/error.hpp"

#include <ATen/CPUGeneratorImpl.h>
#include <torch/script.h>

#include <cmath>
#include <filesystem>

namespace wfm {

PatchDiscriminatorImpl::PatchDiscriminatorImpl(const DiscriminatorConfig& config_)
    : config(config_) {
    if (config.channels < 1 || config.layers < 1) {
        throw ConfigError("discriminator: channels and layers must be positive");
    }
    int64_t in = 3;
    for (int64_t i = 0; i < config.layers; ++i) {
        const int64_t out = config.channels * std::min<int64_t>(int64_t{1} << i, 8);
        convs.push_back(register_module("conv" + std::to_string(i + 1),
                                        SphericalConv(ConvSpec{in, out, 4, 2, 1, i == 0})));
        in = out;
    }
    logit = register_module("logit",
                            torch::nn::Conv2d(torch::nn::Conv2dOptions(in, 1, 1).bias(true)));
}

std::pair<int64_t, int64_t> PatchDiscriminatorImpl::logit_shape(int64_t height,
                                                                 int64_t width) const {
    const int64_t span = int64_t{1} << config.layers;
    if (height < span || width < span) {
        throw ConfigError("discriminator: input " + std::to_string(width) + "x" +
                          std::to_string(height) + " is too small for " +
                          std::to_string(config.layers) + " stride-2 layers (need >= " +
                          std::to_string(span) + " per side)");
    }
    int64_t h = height;
    int64_t w = width;
    for (int64_t i = 0; i < config.layers; ++i) {
        h = (h + 1) / 2;
        w = (w + 1) / 2;
    }
    return {h, w};
}

DiscriminatorOutput PatchDiscriminatorImpl::forward_with_features(const torch::Tensor& image) {
    if (image.dim() != 4 || image.size(1) != 3) {
        throw PreconditionError("discriminator: expected N x 3 x H x W, got " +
                                c10::str(image.sizes()));
    }
    logit_shape(image.size(2), image.size(3));
    DiscriminatorOutput out;
    auto x = image;
    for (size_t i = 0; i < convs.size(); ++i) {
        x = convs[i]->forward(x);
        if (i > 0) {
            x = torch::instance_norm(x, {}, {}, {}, {}, true, 0.0, 1e-5, false);
        }
        x = torch::leaky_relu(x, 0.2);
        out.features.push_back(x);
    }
    out.logits = logit->forward(x);
    return out;
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& image) {
    return forward_with_features(image).logits;
}

const char* perceptual_mode_name(PerceptualMode mode) {
    switch (mode) {
    case PerceptualMode::HRF: return "hrf";
    case PerceptualMode::LRF: return "lrf";
    case PerceptualMode::Desk: return "desk";
    }
    return "unknown";
}

PerceptualMode parse_perceptual_mode(const std::string& name) {
    for (auto m : {PerceptualMode::HRF, PerceptualMode::LRF, PerceptualMode::Desk}) {
        if (name == perceptual_mode_name(m)) {
            return m;
        }
    }
    throw ConfigError("unknown perceptual mode '" + name + "' (expected hrf, lrf or desk)");
}

ConvStackExtractor::ConvStackExtractor(std::vector<int64_t> widths, std::vector<int64_t> dilations,
                                       uint64_t seed)
    : dilations_(std::move(dilations)) {
    if (widths.size() != dilations_.size() || widths.empty()) {
        throw ConfigError("feature extractor: one width per dilation required");
    }
    auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
    int64_t in = 3;
    torch::NoGradGuard no_grad;
    for (size_t i = 0; i < widths.size(); ++i) {
        auto conv = SphericalConv(ConvSpec{in, widths[i], 3, i == 0 ? 2 : 1, dilations_[i], false});
        const double std = std::sqrt(2.0 / static_cast<double>(in * 9));
        conv->conv->weight.copy_(torch::randn(conv->conv->weight.sizes(), gen) * std);
        conv->conv->weight.set_requires_grad(false);
        convs_.push_back(register_module("conv" + std::to_string(i + 1), conv));
        in = widths[i];
    }
}

std::vector<torch::Tensor> ConvStackExtractor::extract(const torch::Tensor& image) {
    std::vector<torch::Tensor> features;
    auto x = image * 2.0 - 1.0;
    for (auto& conv : convs_) {
        x = torch::relu(conv->forward(x));
        features.push_back(x);
    }
    return features;
}

std::string ConvStackExtractor::describe() const {
    std::string s = "conv-stack(dilations=";
    for (size_t i = 0; i < dilations_.size(); ++i) {
        s += (i ? "," : "") + std::to_string(dilations_[i]);
    }
    return s + ")";
}

std::shared_ptr<ConvStackExtractor> ConvStackExtractor::desk_hrf(uint64_t seed) {
    return std::make_shared<ConvStackExtractor>(std::vector<int64_t>{16, 32, 32, 32},
                                                std::vector<int64_t>{1, 2, 4, 8}, seed);
}

std::shared_ptr<ConvStackExtractor> ConvStackExtractor::shallow_lrf(uint64_t seed) {
    return std::make_shared<ConvStackExtractor>(std::vector<int64_t>{16, 32, 32},
                                                std::vector<int64_t>{1, 1, 1}, seed);
}

struct ScriptedExtractor::Impl {
    torch::jit::script::Module module;
};

ScriptedExtractor::ScriptedExtractor(const std::string& path)
    : impl_(std::make_shared<Impl>()), path_(path) {
    try {
        impl_->module = torch::jit::load(path);
    } catch (const c10::Error& e) {
        throw IoError("cannot load perceptual backbone '" + path + "': " + e.what_without_backtrace());
    }
    impl_->module.eval();
    for (auto p : impl_->module.parameters()) {
        p.set_requires_grad(false);
    }
}

std::vector<torch::Tensor> ScriptedExtractor::extract(const torch::Tensor& image) {
    auto out = impl_->module.forward({image});
    std::vector<torch::Tensor> features;
    if (out.isTensor()) {
        features.push_back(out.toTensor());
    } else if (out.isTensorList()) {
        for (const auto& t : out.toTensorList()) {
            features.push_back(t);
        }
    } else if (out.isTuple()) {
        for (const auto& v : out.toTuple()->elements()) {
            features.push_back(v.toTensor());
        }
    } else if (out.isList()) {
        for (const auto& v : out.toList()) {
            features.push_back(v.get().toTensor());
        }
    } else {
        throw ConfigError("perceptual backbone must return a tensor or a list/tuple of tensors");
    }
    return features;
}

std::string ScriptedExtractor::describe() const { return "torchscript(" + path_ + ")"; }

std::shared_ptr<FeatureExtractor> make_perceptual_extractor(
    PerceptualMode mode, const std::string& weights_path,
    const std::function<void(const std::string&)>& warn) {
    switch (mode) {
    case PerceptualMode::LRF:
        return ConvStackExtractor::shallow_lrf();
    case PerceptualMode::Desk:
        return ConvStackExtractor::desk_hrf();
    case PerceptualMode::HRF:
        break;
    }
    if (!weights_path.empty() && std::filesystem::is_regular_file(weights_path)) {
        return std::make_shared<ScriptedExtractor>(weights_path);
    }
    if (warn) {
        warn(weights_path.empty()
                 ? std::string("perceptual.weights not set; using the dilated desk stand-in")
                 : "perceptual.weights '" + weights_path +
                       "' not found; using the dilated desk stand-in");
    }
    return ConvStackExtractor::desk_hrf();
}

void LossWeights::validate() const {
    for (double w : {rec, perc, adv, gp, fm}) {
        if (!std::isfinite(w) || w < 0) {
            throw ConfigError("loss weights must be finite and nonnegative");
        }
    }
}

torch::Tensor reconstruction_loss(const torch::Tensor& target, const torch::Tensor& output,
                                  const torch::Tensor& mask) {
    if (target.sizes() != output.sizes()) {
        throw PreconditionError("reconstruction_loss: target " + c10::str(target.sizes()) +
                                " and output " + c10::str(output.sizes()) + " differ");
    }
    auto keep = (1 - mask.to(output.scalar_type())).expand_as(output);
    auto support = keep.sum();
    auto weighted = ((target - output).abs() * keep).sum();
    if (support.item<double>() == 0.0) {
        return weighted * 0;
    }
    return weighted / support;
}

torch::Tensor perceptual_loss(const std::vector<torch::Tensor>& target_features,
                              const std::vector<torch::Tensor>& output_features) {
    if (target_features.empty()) {
        throw ConfigError("perceptual_loss: no feature layers selected");
    }
    if (target_features.size() != output_features.size()) {
        throw PreconditionError("perceptual_loss: feature lists differ in length");
    }
    torch::Tensor total;
    for (size_t i = 0; i < target_features.size(); ++i) {
        auto layer = (target_features[i] - output_features[i]).pow(2).mean();
        total = total.defined() ? total + layer : layer;
    }
    return total / static_cast<double>(target_features.size());
}

torch::Tensor perceptual_loss(const torch::Tensor& target, const torch::Tensor& output,
                              FeatureExtractor& extractor) {
    std::vector<torch::Tensor> target_features;
    {
        torch::NoGradGuard no_grad;
        target_features = extractor.extract(target);
    }
    return perceptual_loss(target_features, extractor.extract(output));
}

torch::Tensor patch_mask(const torch::Tensor& mask, int64_t grid_h, int64_t grid_w) {
    auto m = mask.to(torch::kFloat64);
    auto area = torch::adaptive_avg_pool2d(m, {grid_h, grid_w});
    return (area >= 0.5).to(mask.scalar_type());
}

namespace {

torch::Tensor support_mean(const torch::Tensor& values, const torch::Tensor& weight) {
    auto support = weight.sum();
    auto weighted = (values * weight).sum();
    if (support.item<double>() == 0.0) {
        return weighted * 0;
    }
    return weighted / support;
}

}  // namespace

torch::Tensor discriminator_loss(const torch::Tensor& real_logits,
                                 const torch::Tensor& fake_logits,
                                 const torch::Tensor& patch_mask_) {
    if (fake_logits.sizes() != patch_mask_.sizes()) {
        throw PreconditionError("discriminator_loss: logit grid " + c10::str(fake_logits.sizes()) +
                                " and patch mask " + c10::str(patch_mask_.sizes()) + " differ");
    }
    auto m = patch_mask_.to(fake_logits.scalar_type());
    auto real_term = torch::softplus(-real_logits).mean();
    auto fake_as_real = support_mean(torch::softplus(-fake_logits), 1 - m);
    auto fake_as_fake = support_mean(torch::softplus(fake_logits), m);
    return real_term + fake_as_real + fake_as_fake;
}

torch::Tensor generator_adv_loss(const torch::Tensor& fake_logits) {
    return torch::softplus(-fake_logits).mean();
}

torch::Tensor gradient_penalty(const torch::Tensor& real,
                               const std::function<torch::Tensor(const torch::Tensor&)>& critic) {
    if (!torch::GradMode::is_enabled()) {
        throw Error("gradient_penalty: input gradients unavailable with grad mode disabled");
    }
    auto x = real.detach().requires_grad_(true);
    auto out = critic(x);
    auto zero = torch::zeros({}, real.options());
    if (!out.requires_grad()) {
        return zero;
    }
    auto grads = torch::autograd::grad({out.sum()}, {x}, {}, true, true, true);
    if (!grads[0].defined()) {
        return zero;
    }
    return grads[0].pow(2).flatten(1).sum(1).mean();
}

torch::Tensor feature_matching_loss(const std::vector<torch::Tensor>& real_features,
                                    const std::vector<torch::Tensor>& fake_features) {
    if (real_features.size() != fake_features.size() || real_features.empty()) {
        throw PreconditionError("feature_matching_loss: feature lists must be non-empty and match");
    }
    torch::Tensor total;
    for (size_t i = 0; i < real_features.size(); ++i) {
        auto layer = (real_features[i] - fake_features[i]).pow(2).mean();
        total = total.defined() ? total + layer : layer;
    }
    return total;
}

torch::Tensor total_generator_loss(const GeneratorLossTerms& terms, const LossWeights& weights) {
    return weights.rec * terms.rec + weights.perc * terms.perc + weights.adv * terms.adv +
           weights.fm * terms.fm;
}

}  // namespace wfm
