#include "wfm/core_ops.hpp"

#include "wfm/error.hpp"

#include <string>
#include <vector>

namespace wfm {

namespace {

void require_map(const torch::Tensor& x, const char* op) {
    if (x.dim() != 4) {
        throw PreconditionError(std::string(op) + ": expected an N x C x H x W tensor, got " +
                                std::to_string(x.dim()) + " dims");
    }
    if (x.size(1) < 1 || x.size(2) < 1 || x.size(3) < 1) {
        throw PreconditionError(std::string(op) + ": channel and spatial dims must be positive");
    }
}

torch::Tensor circular_index(int64_t w, int64_t left, int64_t right) {
    std::vector<int64_t> idx;
    idx.reserve(static_cast<size_t>(w + left + right));
    for (int64_t j = -left; j < w + right; ++j) {
        idx.push_back(((j % w) + w) % w);
    }
    return torch::tensor(idx, torch::kLong);
}

torch::Tensor reflect_index(int64_t h, int64_t top, int64_t bottom) {
    std::vector<int64_t> idx;
    idx.reserve(static_cast<size_t>(h + top + bottom));
    for (int64_t i = -top; i < h + bottom; ++i) {
        if (h == 1) {
            idx.push_back(0);
        } else if (i < 0) {
            idx.push_back(-i);
        } else if (i >= h) {
            idx.push_back(2 * (h - 1) - i);
        } else {
            idx.push_back(i);
        }
    }
    return torch::tensor(idx, torch::kLong);
}

}  // namespace

const char* axis_name(Axis axis) { return axis == Axis::Height ? "height" : "width"; }

torch::Tensor spherical_pad(const torch::Tensor& x, PadSpec spec) {
    return spherical_pad(x, spec.pad_h, spec.pad_h, spec.pad_w, spec.pad_w, false);
}

torch::Tensor spherical_pad(const torch::Tensor& x, int64_t top, int64_t bottom, int64_t left,
                            int64_t right, bool allow_single_row) {
    require_map(x, "spherical_pad");
    const int64_t h = x.size(2);
    const int64_t w = x.size(3);
    if (top < 0 || bottom < 0 || left < 0 || right < 0) {
        throw PreconditionError("spherical_pad: pad amounts must be nonnegative");
    }
    const bool single_row = allow_single_row && h == 1;
    if (!single_row && (top >= h || bottom >= h)) {
        throw PreconditionError("spherical_pad: reflection pad of " +
                                std::to_string(std::max(top, bottom)) +
                                " rows needs at least " + std::to_string(std::max(top, bottom) + 1) +
                                " rows, map has " + std::to_string(h));
    }
    if (left > w || right > w) {
        throw PreconditionError("spherical_pad: circular pad of " +
                                std::to_string(std::max(left, right)) + " columns exceeds width " +
                                std::to_string(w));
    }
    torch::Tensor out = x;
    if (left > 0 || right > 0) {
        out = out.index_select(3, circular_index(w, left, right).to(x.device()));
    }
    if (top > 0 || bottom > 0) {
        out = out.index_select(2, reflect_index(h, top, bottom).to(x.device()));
    }
    return out;
}

std::pair<torch::Tensor, torch::Tensor> window_split(const torch::Tensor& x, Axis axis) {
    require_map(x, "window_split");
    const int64_t dim = axis_dim(axis);
    const int64_t n = x.size(dim);
    if (n % 2 != 0) {
        throw PreconditionError(std::string("window_split: ") + axis_name(axis) + " length " +
                                std::to_string(n) +
                                " is odd; resize the input so every stage has an even " +
                                axis_name(axis));
    }
    auto halves = x.split(n / 2, dim);
    return {halves[0], halves[1]};
}

torch::Tensor window_merge(const torch::Tensor& a, const torch::Tensor& b, Axis axis) {
    require_map(a, "window_merge");
    require_map(b, "window_merge");
    if (a.sizes() != b.sizes()) {
        throw PreconditionError("window_merge: windows differ in shape");
    }
    return torch::cat({a, b}, axis_dim(axis));
}

void ensure_finite(const torch::Tensor& t, const char* where) {
    if (!torch::isfinite(t).all().item<bool>()) {
        throw NumericError(std::string(where) + ": non-finite values in tensor of shape " +
                           c10::str(t.sizes()));
    }
}

StarReLUImpl::StarReLUImpl(double scale_value, double bias_value) {
    scale = register_parameter("scale", torch::full({1}, scale_value));
    bias = register_parameter("bias", torch::full({1}, bias_value));
}

torch::Tensor StarReLUImpl::forward(const torch::Tensor& x) {
    auto r = torch::relu(x);
    return scale * r * r + bias;
}

ChannelNormImpl::ChannelNormImpl(int64_t channels, double eps_) : eps(eps_) {
    weight = register_parameter("weight", torch::ones({channels}));
}

torch::Tensor ChannelNormImpl::forward(const torch::Tensor& x) {
    auto mean = x.mean(1, true);
    auto centered = x - mean;
    auto var = (centered * centered).mean(1, true);
    return centered * torch::rsqrt(var + eps) * weight.view({1, -1, 1, 1});
}

std::pair<int64_t, int64_t> same_padding(int64_t in, int64_t kernel, int64_t stride,
                                         int64_t dilation) {
    const int64_t span = dilation * (kernel - 1) + 1;
    const int64_t out = (in + stride - 1) / stride;
    const int64_t total = std::max<int64_t>(0, (out - 1) * stride + span - in);
    return {total / 2, total - total / 2};
}

SphericalConvImpl::SphericalConvImpl(const ConvSpec& spec_) : spec(spec_) {
    if (spec.in_channels < 1 || spec.out_channels < 1 || spec.kernel < 1 || spec.stride < 1 ||
        spec.dilation < 1) {
        throw ConfigError("SphericalConv: channel, kernel, stride and dilation must be positive");
    }
    conv = register_module(
        "conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(spec.in_channels, spec.out_channels,
                                                           spec.kernel)
                                      .stride(spec.stride)
                                      .dilation(spec.dilation)
                                      .bias(spec.bias)));
}

torch::Tensor SphericalConvImpl::forward(const torch::Tensor& x) {
    if (x.size(1) != spec.in_channels) {
        throw ConfigError("SphericalConv: expected " + std::to_string(spec.in_channels) +
                          " input channels, got " + std::to_string(x.size(1)));
    }
    auto [top, bottom] = same_padding(x.size(2), spec.kernel, spec.stride, spec.dilation);
    auto [left, right] = same_padding(x.size(3), spec.kernel, spec.stride, spec.dilation);
    return conv->forward(spherical_pad(x, top, bottom, left, right, true));
}

GatedConvImpl::GatedConvImpl(const GatedConvOptions& options_) : options(options_) {
    if (options.in_channels < 1 || options.out_channels < 1 || options.kernel < 1 ||
        options.stride < 1) {
        throw ConfigError("GatedConv: channel, kernel and stride must be positive");
    }
    auto make = [&](bool bias) {
        return torch::nn::Conv2d(
            torch::nn::Conv2dOptions(options.in_channels, options.out_channels, options.kernel)
                .stride(options.stride)
                .bias(bias));
    };
    feature = register_module("feature", make(false));
    gate = register_module("gate", make(true));
    if (options.activation == GateActivation::StarReLU) {
        act = register_module("act", StarReLU());
    }
}

torch::Tensor GatedConvImpl::pad(const torch::Tensor& x) const {
    if (x.dim() != 4 || x.size(1) != options.in_channels) {
        throw ConfigError("GatedConv: expected " + std::to_string(options.in_channels) +
                          " input channels, got tensor of shape " + c10::str(x.sizes()));
    }
    auto [top, bottom] = same_padding(x.size(2), options.kernel, options.stride);
    auto [left, right] = same_padding(x.size(3), options.kernel, options.stride);
    return spherical_pad(x, top, bottom, left, right, true);
}

torch::Tensor GatedConvImpl::feature_response(const torch::Tensor& x) {
    auto f = feature->forward(pad(x));
    return act ? act->forward(f) : f;
}

torch::Tensor GatedConvImpl::forward(const torch::Tensor& x) {
    auto padded = pad(x);
    auto f = feature->forward(padded);
    if (act) {
        f = act->forward(f);
    }
    return f * torch::sigmoid(gate->forward(padded));
}

}  // namespace wfm
