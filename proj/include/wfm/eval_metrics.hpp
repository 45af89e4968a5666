#pragma once

// Full-reference metrics and the mask-kind x ratio-interval protocol.

#include "wfm/data.hpp"

#include <functional>
#include <string>
#include <vector>

namespace wfm {

inline constexpr double kPsnrCap = 100.0;

/// Mean |x - y| over every element.
double mae(const torch::Tensor& x, const torch::Tensor& y);

/// 10 log10(1 / MSE) for data range 1, capped at kPsnrCap when MSE is 0.
double psnr(const torch::Tensor& x, const torch::Tensor& y);

/// Mean SSIM over the valid region of an 11 x 11 Gaussian window
/// (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2, averaged over channels. Inputs
/// are C x H x W (or 1 x C x H x W) in [0, 1]. Computed in double.
double ssim(const torch::Tensor& x, const torch::Tensor& y);

struct CellMetrics {
    MaskKind kind = MaskKind::Rectangular;
    RatioInterval interval;
    double mae = 0.0;
    double psnr = 0.0;
    double ssim = 0.0;
    int64_t count = 0;
};

struct MetricsReport {
    std::vector<CellMetrics> cells;  ///< kind-major in grid order
    bool composite = false;

    const CellMetrics& cell(MaskKind kind, RatioInterval interval) const;
};

struct EvalGrid {
    std::vector<MaskKind> kinds;
    std::vector<RatioInterval> intervals;

    /// All five kinds x the five evaluation intervals.
    static EvalGrid full();
    /// {rectangular, segmentation} x {10-20%, 30-40%} used during training.
    static EvalGrid validation();
};

/// Maps a 1 x 3 x H x W image and 1 x 1 x H x W mask to the inpainted image.
using InpaintFn = std::function<torch::Tensor(const torch::Tensor&, const torch::Tensor&)>;

struct EvalOptions {
    uint64_t seed = 0;
    bool composite = false;   ///< keep known pixels, score only synthesized ones
    size_t max_scenes = 0;    ///< 0 = all
};

/// Mask seed for one (scene, kind, interval) cell; depends only on the ids.
uint64_t evaluation_mask_seed(uint64_t base, const std::string& scene_id, MaskKind kind,
                              RatioInterval interval);

/// Runs `model` on every scene for every cell. Per-scene values are reduced in
/// scene-id order, so the report does not depend on the source ordering.
MetricsReport evaluate(const InpaintFn& model, const SceneSource& source, const EvalGrid& grid,
                       const EvalOptions& options = {});

std::string report_to_csv(const MetricsReport& report);
std::string report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const std::string& text);
/// Kinds as rows, intervals as column groups of MAE / PSNR / SSIM.
std::string report_to_markdown(const MetricsReport& report);

}  // namespace wfm
