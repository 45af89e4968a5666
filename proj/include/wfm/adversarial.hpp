#pragma once

// Patch discriminator, perceptual feature extractors and every loss term used
// to train the inpainting generator.

#include "wfm/core_ops.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace wfm {

struct DiscriminatorConfig {
    int64_t channels = 64;
    int64_t layers = 4;
};

struct DiscriminatorOutput {
    torch::Tensor logits;                 ///< N x 1 x h_p x w_p
    std::vector<torch::Tensor> features;  ///< post-activation maps of every strided layer
};

/// Stack of k4/s2 convolutions with leaky activations and instance
/// normalization from the second layer on, closed by a pointwise logit layer.
class PatchDiscriminatorImpl : public torch::nn::Module {
public:
    explicit PatchDiscriminatorImpl(const DiscriminatorConfig& config);

    DiscriminatorOutput forward_with_features(const torch::Tensor& image);
    torch::Tensor forward(const torch::Tensor& image);

    /// Logit grid extent for an H x W input. Throws ConfigError when the input
    /// is too small for the stack.
    std::pair<int64_t, int64_t> logit_shape(int64_t height, int64_t width) const;

    DiscriminatorConfig config;
    std::vector<SphericalConv> convs;
    torch::nn::Conv2d logit{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

enum class PerceptualMode { HRF, LRF, Desk };

const char* perceptual_mode_name(PerceptualMode mode);
PerceptualMode parse_perceptual_mode(const std::string& name);

/// Fixed (never trained) mapping image -> feature maps used by the perceptual
/// loss. Inputs are N x 3 x H x W in [0, 1].
class FeatureExtractor : public torch::nn::Module {
public:
    virtual std::vector<torch::Tensor> extract(const torch::Tensor& image) = 0;
    virtual std::string describe() const = 0;
};

/// Frozen convolution stack with deterministic weights drawn from `seed`.
/// One feature map per layer; the first layer has stride 2.
class ConvStackExtractor : public FeatureExtractor {
public:
    ConvStackExtractor(std::vector<int64_t> widths, std::vector<int64_t> dilations,
                       uint64_t seed);

    std::vector<torch::Tensor> extract(const torch::Tensor& image) override;
    std::string describe() const override;

    /// Dilated stand-in for the high receptive field backbone (dilations 1, 2, 4, 8).
    static std::shared_ptr<ConvStackExtractor> desk_hrf(uint64_t seed = 20240607);
    /// Shallow stack without dilation for the low receptive field ablation.
    static std::shared_ptr<ConvStackExtractor> shallow_lrf(uint64_t seed = 20240607);

private:
    std::vector<int64_t> dilations_;
    std::vector<SphericalConv> convs_;
};

/// TorchScript backbone whose forward(image) returns a tensor list/tuple of
/// feature maps (for example an exported dilated ResNet-50 segmentation trunk).
class ScriptedExtractor : public FeatureExtractor {
public:
    explicit ScriptedExtractor(const std::string& path);
    std::vector<torch::Tensor> extract(const torch::Tensor& image) override;
    std::string describe() const override;

private:
    struct Impl;
    std::shared_ptr<Impl> impl_;
    std::string path_;
};

/// HRF loads `weights_path` when it names a readable TorchScript file and
/// otherwise falls back to the dilated desk stand-in after calling `warn`.
/// LRF and Desk always use the built-in stacks.
std::shared_ptr<FeatureExtractor> make_perceptual_extractor(
    PerceptualMode mode, const std::string& weights_path,
    const std::function<void(const std::string&)>& warn);

struct LossWeights {
    double rec = 10.0;
    double perc = 100.0;
    double adv = 10.0;
    double gp = 0.001;
    double fm = 30.0;

    void validate() const;
};

/// Mean |x - x_hat| over the pixels with mask 0, all channels. Zero when the
/// whole image is hole.
torch::Tensor reconstruction_loss(const torch::Tensor& target, const torch::Tensor& output,
                                  const torch::Tensor& mask);

/// Mean over layers of the per-layer mean squared feature difference.
torch::Tensor perceptual_loss(const std::vector<torch::Tensor>& target_features,
                              const std::vector<torch::Tensor>& output_features);
torch::Tensor perceptual_loss(const torch::Tensor& target, const torch::Tensor& output,
                              FeatureExtractor& extractor);

/// Area-resamples the hole mask onto the logit grid; a patch counts as fake
/// when at least half of it is hole.
torch::Tensor patch_mask(const torch::Tensor& mask, int64_t grid_h, int64_t grid_w);

/// -E[log s(D(x))] - E_(1-m)[log s(D(x_hat))] - E_m[log(1 - s(D(x_hat)))],
/// with each masked expectation averaged over its own support (an empty
/// support contributes 0).
torch::Tensor discriminator_loss(const torch::Tensor& real_logits,
                                 const torch::Tensor& fake_logits,
                                 const torch::Tensor& patch_mask);

/// Non-saturating generator loss -mean(log s(D(x_hat))) over all patches.
torch::Tensor generator_adv_loss(const torch::Tensor& fake_logits);

/// R1 penalty: batch mean of ||grad_x sum(D(x))||^2 on real images. Needs
/// grad mode; throws Error otherwise. Returns 0 if D does not depend on x.
torch::Tensor gradient_penalty(const torch::Tensor& real,
                               const std::function<torch::Tensor(const torch::Tensor&)>& critic);

/// Sum over layers of the mean squared feature distance.
torch::Tensor feature_matching_loss(const std::vector<torch::Tensor>& real_features,
                                    const std::vector<torch::Tensor>& fake_features);

struct GeneratorLossTerms {
    torch::Tensor rec;
    torch::Tensor perc;
    torch::Tensor adv;
    torch::Tensor fm;
};

/// rec * L_rec + perc * L_perc + adv * L_G + fm * L_FM.
torch::Tensor total_generator_loss(const GeneratorLossTerms& terms, const LossWeights& weights);

}  // namespace wfm
