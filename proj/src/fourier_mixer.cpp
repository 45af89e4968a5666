#include "wfm/fourier_mixer.hpp"

#include "wfm/error.hpp"

namespace wfm {

FourierUnitImpl::FourierUnitImpl(const FourierUnitOptions& options_) : options(options_) {
    if (options.channels < 1) {
        throw ConfigError("FourierUnit: channels must be positive");
    }
    const int64_t stacked = 2 * options.channels;
    auto w = torch::empty({stacked, stacked, 1, 1});
    torch::nn::init::kaiming_uniform_(w, std::sqrt(5.0));
    weight = register_parameter("weight", w);
    norm = register_module("norm", ChannelNorm(stacked));
    act = register_module("act", StarReLU());
}

void FourierUnitImpl::set_bypass(bool bypass) {
    options.normalize = !bypass;
    options.activate = !bypass;
}

torch::Tensor FourierUnitImpl::forward(const torch::Tensor& x) {
    if (x.dim() != 4 || x.size(1) != options.channels) {
        throw ConfigError("FourierUnit: expected " + std::to_string(options.channels) +
                          " channels, got tensor of shape " + c10::str(x.sizes()));
    }
    ensure_finite(x, "FourierUnit input");

    const int64_t h = x.size(2);
    const int64_t w = x.size(3);
    torch::Tensor spectrum;
    switch (options.axes) {
    case FourierAxes::Width:
        spectrum = torch::fft::rfft(x, w, -1, "ortho");
        break;
    case FourierAxes::Height:
        spectrum = torch::fft::rfft(x, h, 2, "ortho");
        break;
    case FourierAxes::Both:
        spectrum = torch::fft::rfftn(x, std::vector<int64_t>{h, w}, std::vector<int64_t>{2, 3},
                                     "ortho");
        break;
    }

    auto stacked = torch::cat({torch::real(spectrum), torch::imag(spectrum)}, 1);
    auto mixed = torch::conv2d(stacked, weight);
    if (options.normalize) {
        mixed = norm->forward(mixed);
    }
    if (options.activate) {
        mixed = act->forward(mixed);
    }
    auto parts = mixed.chunk(2, 1);
    auto back = torch::complex(parts[0].contiguous(), parts[1].contiguous());

    switch (options.axes) {
    case FourierAxes::Width:
        return torch::fft::irfft(back, w, -1, "ortho");
    case FourierAxes::Height:
        return torch::fft::irfft(back, h, 2, "ortho");
    case FourierAxes::Both:
    default:
        return torch::fft::irfftn(back, std::vector<int64_t>{h, w}, std::vector<int64_t>{2, 3},
                                  "ortho");
    }
}

const char* mixer_name(MixerVariant variant) {
    switch (variant) {
    case MixerVariant::WFM: return "wfm";
    case MixerVariant::FMNoWindow: return "fm_no_window";
    case MixerVariant::WFM2D: return "wfm_2d";
    case MixerVariant::FFC: return "ffc";
    case MixerVariant::GatedOnly: return "gated_only";
    }
    return "unknown";
}

MixerVariant parse_mixer(const std::string& name) {
    for (auto v : {MixerVariant::WFM, MixerVariant::FMNoWindow, MixerVariant::WFM2D,
                   MixerVariant::FFC, MixerVariant::GatedOnly}) {
        if (name == mixer_name(v)) {
            return v;
        }
    }
    throw ConfigError("unknown mixer variant '" + name +
                      "' (expected wfm, fm_no_window, wfm_2d, ffc or gated_only)");
}

FfcMixerImpl::FfcMixerImpl(int64_t channels, int64_t kernel) : half(channels / 2) {
    if (channels % 4 != 0) {
        throw ConfigError("FFC mixer needs a channel count divisible by 4, got " +
                          std::to_string(channels));
    }
    auto conv = [&](int64_t in, int64_t out) {
        return SphericalConv(ConvSpec{in, out, kernel, 1, 1, false});
    };
    local_to_local = register_module("local_to_local", conv(half, half));
    global_to_local = register_module("global_to_local", conv(half, half));
    local_to_global = register_module("local_to_global", conv(half, half));
    spectral_in = register_module(
        "spectral_in", torch::nn::Conv2d(torch::nn::Conv2dOptions(half, half / 2, 1).bias(false)));
    spectral_act = register_module("spectral_act", StarReLU());
    spectral_unit = register_module(
        "spectral_unit", FourierUnit(FourierUnitOptions{half / 2, FourierAxes::Both, true, true}));
    spectral_out = register_module(
        "spectral_out", torch::nn::Conv2d(torch::nn::Conv2dOptions(half / 2, half, 1).bias(false)));
    local_act = register_module("local_act", StarReLU());
    global_act = register_module("global_act", StarReLU());
}

torch::Tensor FfcMixerImpl::forward(const torch::Tensor& x) {
    auto parts = x.split(half, 1);
    const auto& local = parts[0];
    const auto& global = parts[1];
    auto s = spectral_act->forward(spectral_in->forward(global));
    auto g2g = spectral_out->forward(s + spectral_unit->forward(s));
    auto out_local = local_act->forward(local_to_local->forward(local) +
                                        global_to_local->forward(global));
    auto out_global = global_act->forward(local_to_global->forward(local) + g2g);
    return torch::cat({out_local, out_global}, 1);
}

torch::Tensor windowed_unit(FourierUnit& unit, const torch::Tensor& x, Axis axis) {
    if (x.size(axis_dim(axis)) % 2 != 0) {
        return unit->forward(x);
    }
    auto [a, b] = window_split(x, axis);
    return window_merge(unit->forward(a), unit->forward(b), axis);
}

namespace {

torch::Tensor quadrant_unit(FourierUnit& unit, const torch::Tensor& x) {
    const bool split_w = x.size(3) % 2 == 0;
    const bool split_h = x.size(2) % 2 == 0;
    auto per_row = [&](const torch::Tensor& rows) {
        if (!split_w) {
            return unit->forward(rows);
        }
        auto [l, r] = window_split(rows, Axis::Width);
        return window_merge(unit->forward(l), unit->forward(r), Axis::Width);
    };
    if (!split_h) {
        return per_row(x);
    }
    auto [t, b] = window_split(x, Axis::Height);
    return window_merge(per_row(t), per_row(b), Axis::Height);
}

int64_t branch_count(MixerVariant v) {
    switch (v) {
    case MixerVariant::WFM:
    case MixerVariant::FMNoWindow: return 4;
    case MixerVariant::WFM2D: return 2;
    case MixerVariant::GatedOnly: return 1;
    case MixerVariant::FFC: return 0;
    }
    return 0;
}

}  // namespace

TokenMixerImpl::TokenMixerImpl(const TokenMixerOptions& options_) : options(options_) {
    const int64_t c = options.channels;
    if (c < 2 || c % 2 != 0) {
        throw ConfigError("token mixer needs an even channel count >= 2, got " +
                          std::to_string(c));
    }
    if (options.variant == MixerVariant::FFC) {
        ffc = register_module("ffc", FfcMixer(c, options.kernel));
        return;
    }
    const int64_t half = c / 2;
    reduce = register_module(
        "reduce", GatedConv(GatedConvOptions{c, half, options.kernel, 1, GateActivation::StarReLU}));
    switch (options.variant) {
    case MixerVariant::WFM:
    case MixerVariant::FMNoWindow:
        unit_width = register_module(
            "unit_width", FourierUnit(FourierUnitOptions{half, FourierAxes::Width, true, true}));
        unit_height = register_module(
            "unit_height", FourierUnit(FourierUnitOptions{half, FourierAxes::Height, true, true}));
        break;
    case MixerVariant::WFM2D:
        unit_2d = register_module(
            "unit_2d", FourierUnit(FourierUnitOptions{half, FourierAxes::Both, true, true}));
        break;
    default:
        break;
    }
    const int64_t fuse_in = branch_count(options.variant) * half;
    fuse = register_module(
        "fuse", GatedConv(GatedConvOptions{fuse_in, c, options.kernel, 1, GateActivation::Identity}));
}

torch::Tensor TokenMixerImpl::forward(const torch::Tensor& x) {
    if (x.dim() != 4 || x.size(1) != options.channels) {
        throw ConfigError("token mixer: expected " + std::to_string(options.channels) +
                          " channels, got tensor of shape " + c10::str(x.sizes()));
    }
    if (options.variant == MixerVariant::FFC) {
        return ffc->forward(x);
    }
    auto r = reduce->forward(x);
    torch::Tensor branches;
    switch (options.variant) {
    case MixerVariant::WFM: {
        auto full_w = unit_width->forward(r);
        auto full_h = unit_height->forward(r);
        branches = torch::cat({full_w, full_h, windowed_unit(unit_width, r, Axis::Width),
                               windowed_unit(unit_height, r, Axis::Height)},
                              1);
        break;
    }
    case MixerVariant::FMNoWindow: {
        auto full_w = unit_width->forward(r);
        auto full_h = unit_height->forward(r);
        branches = torch::cat({full_w, full_h, full_w, full_h}, 1);
        break;
    }
    case MixerVariant::WFM2D:
        branches = torch::cat({unit_2d->forward(r), quadrant_unit(unit_2d, r)}, 1);
        break;
    case MixerVariant::GatedOnly:
    default:
        branches = r;
        break;
    }
    return fuse->forward(branches);
}

int64_t fourier_unit_parameter_count(int64_t channels) {
    const int64_t stacked = 2 * channels;
    return stacked * stacked + stacked + 2;
}

int64_t token_mixer_parameter_count(const TokenMixerOptions& options) {
    const int64_t c = options.channels;
    const int64_t k2 = options.kernel * options.kernel;
    const int64_t half = c / 2;
    if (options.variant == MixerVariant::FFC) {
        const int64_t quarter = half / 2;
        return 3 * half * half * k2          // three spatial convs
               + half * quarter + 2          // spectral_in + act
               + fourier_unit_parameter_count(quarter)
               + quarter * half              // spectral_out
               + 4;                          // output activations
    }
    auto gated = [&](int64_t in, int64_t out, bool act) {
        return 2 * in * out * k2 + out + (act ? 2 : 0);
    };
    int64_t total = gated(c, half, true);
    switch (options.variant) {
    case MixerVariant::WFM:
    case MixerVariant::FMNoWindow: total += 2 * fourier_unit_parameter_count(half); break;
    case MixerVariant::WFM2D: total += fourier_unit_parameter_count(half); break;
    default: break;
    }
    total += gated(branch_count(options.variant) * half, c, false);
    return total;
}

}  // namespace wfm
