#pragma once

// Hole-mask generators. Every generator returns a strictly binary mask
// (1 = pixel to synthesize) whose hole ratio falls inside the requested
// interval [lo, hi); segmentation masks guarantee only ratio >= lo.

#include <torch/torch.h>

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace wfm {

using Rng = std::mt19937_64;

struct HoleMask {
    int64_t height = 0;
    int64_t width = 0;
    std::vector<uint8_t> data;  ///< row-major, 0 or 1

    HoleMask() = default;
    HoleMask(int64_t h, int64_t w, uint8_t fill = 0)
        : height(h), width(w), data(static_cast<size_t>(h * w), fill) {}

    uint8_t& at(int64_t y, int64_t x) { return data[static_cast<size_t>(y * width + x)]; }
    uint8_t at(int64_t y, int64_t x) const { return data[static_cast<size_t>(y * width + x)]; }
    int64_t count() const;

    /// 1 x 1 x H x W float tensor.
    torch::Tensor to_tensor() const;
    static HoleMask from_tensor(const torch::Tensor& t);

    bool operator==(const HoleMask&) const = default;
};

/// Integer semantic labels (NYU-40 ids: 1 wall, 2 floor, 22 ceiling,
/// 0 unlabeled; everything else is clutter).
struct LabelMap {
    int64_t height = 0;
    int64_t width = 0;
    std::vector<int32_t> data;

    LabelMap() = default;
    LabelMap(int64_t h, int64_t w, int32_t fill = 0)
        : height(h), width(w), data(static_cast<size_t>(h * w), fill) {}

    int32_t& at(int64_t y, int64_t x) { return data[static_cast<size_t>(y * width + x)]; }
    int32_t at(int64_t y, int64_t x) const { return data[static_cast<size_t>(y * width + x)]; }

    bool operator==(const LabelMap&) const = default;
};

namespace labels {
inline constexpr int32_t kUnlabeled = 0;
inline constexpr int32_t kWall = 1;
inline constexpr int32_t kFloor = 2;
inline constexpr int32_t kCeiling = 22;
/// True for every label that is not room structure.
bool is_clutter(int32_t label);
}  // namespace labels

enum class MaskKind { Irregular, Rectangular, Segmentation, Outpainting, Quadrants };

inline constexpr MaskKind kAllMaskKinds[] = {MaskKind::Segmentation, MaskKind::Irregular,
                                             MaskKind::Rectangular, MaskKind::Outpainting,
                                             MaskKind::Quadrants};

const char* mask_kind_name(MaskKind kind);
MaskKind parse_mask_kind(const std::string& name);

struct RatioInterval {
    double lo = 0.0;
    double hi = 0.0;

    bool contains(double r) const { return r >= lo && r < hi; }
    /// "10-20" style label in whole percent.
    std::string label() const;
};

/// The five evaluation buckets 1-10%, 10-20%, ..., 40-50%.
std::vector<RatioInterval> evaluation_intervals();

struct MaskSpec {
    MaskKind kind = MaskKind::Rectangular;
    RatioInterval interval{0.1, 0.2};
    int64_t height = 0;
    int64_t width = 0;
    uint64_t seed = 0;
};

double mask_ratio(const HoleMask& mask);

/// Random polyline strokes of random thickness (columns wrap around).
HoleMask irregular_mask(int64_t height, int64_t width, RatioInterval interval, Rng& rng);

/// Union of axis-aligned rectangles of random aspect ratio.
HoleMask rectangular_mask(int64_t height, int64_t width, RatioInterval interval, Rng& rng);

/// One 3x3 dilation step; columns wrap, rows clamp.
HoleMask dilate(const HoleMask& mask);

struct SegmentationResult {
    HoleMask mask;
    std::vector<double> ratio_trace;  ///< ratio before dilation, then after each step
    bool used_fallback = false;       ///< no clutter: rectangular mask returned
};

/// Clutter pixels of `semantics` (a random subset of clutter components when
/// all of them would overshoot hi), dilated until the ratio reaches lo.
SegmentationResult segmentation_mask(const LabelMap& semantics, RatioInterval interval, Rng& rng);

/// Band anchored on a random image edge spanning the full extent of that edge.
HoleMask outpainting_mask(int64_t height, int64_t width, RatioInterval interval, Rng& rng);

/// Rectangle anchored on a random image corner.
HoleMask quadrant_mask(int64_t height, int64_t width, RatioInterval interval, Rng& rng);

/// Dispatches on spec.kind with an Rng seeded from spec.seed. `semantics` is
/// required for MaskKind::Segmentation.
HoleMask generate_mask(const MaskSpec& spec, const LabelMap* semantics = nullptr);

struct TrainingMaskPolicy {
    double ratio_min = 0.01;
    double ratio_max = 0.5;
    double interval_width = 0.05;
};

/// Uniform choice among the five kinds (Segmentation only with semantics) and
/// a target ratio drawn uniformly from (ratio_min, ratio_max).
HoleMask sample_training_mask(Rng& rng, int64_t height, int64_t width, const LabelMap* semantics,
                              const TrainingMaskPolicy& policy = {},
                              MaskKind* chosen_kind = nullptr);

}  // namespace wfm
