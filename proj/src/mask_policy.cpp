#include "wfm/mask_policy.hpp"

#include "wfm/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace wfm {

namespace {

constexpr int kMaxAttempts = 200;

// Stroke parameters at a 512-pixel-wide reference; scaled with the image.
constexpr int kMinVertices = 4;
constexpr int kMaxVertices = 12;
constexpr int kMaxStrokes = 8;
constexpr double kMinStrokeWidth = 2.0;
constexpr double kMaxStrokeWidth = 25.0;
constexpr double kReferenceWidth = 512.0;

double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int64_t uniform_int(Rng& rng, int64_t lo, int64_t hi) {
    return std::uniform_int_distribution<int64_t>(lo, hi)(rng);
}

void require_dims(int64_t height, int64_t width, const char* op) {
    if (height < 1 || width < 1) {
        throw PreconditionError(std::string(op) + ": mask dims must be positive");
    }
}

void require_interval(RatioInterval interval, const char* op) {
    if (!(interval.lo >= 0.0 && interval.lo < interval.hi && interval.hi <= 1.0)) {
        throw PreconditionError(std::string(op) + ": invalid ratio interval [" +
                                std::to_string(interval.lo) + ", " + std::to_string(interval.hi) +
                                ")");
    }
}

[[noreturn]] void fail_interval(const char* op, RatioInterval interval) {
    throw Error(std::string(op) + ": no mask in interval [" + std::to_string(interval.lo) + ", " +
                std::to_string(interval.hi) + ") after " + std::to_string(kMaxAttempts) +
                " attempts");
}

// Marks a filled disk and returns the number of newly set pixels.
int64_t stamp_disk(HoleMask& mask, double cy, double cx, double radius) {
    int64_t added = 0;
    const int64_t r = static_cast<int64_t>(std::ceil(radius));
    const int64_t iy = static_cast<int64_t>(std::lround(cy));
    const int64_t ix = static_cast<int64_t>(std::lround(cx));
    for (int64_t dy = -r; dy <= r; ++dy) {
        const int64_t y = iy + dy;
        if (y < 0 || y >= mask.height) {
            continue;
        }
        for (int64_t dx = -r; dx <= r; ++dx) {
            if (static_cast<double>(dy * dy + dx * dx) > radius * radius + 0.25) {
                continue;
            }
            const int64_t x = ((ix + dx) % mask.width + mask.width) % mask.width;
            auto& px = mask.at(y, x);
            if (!px) {
                px = 1;
                ++added;
            }
        }
    }
    return added;
}

// 4-connected components of clutter pixels, listed as pixel indices.
std::vector<std::vector<int64_t>> clutter_components(const LabelMap& sem) {
    const int64_t n = sem.height * sem.width;
    std::vector<int64_t> component(static_cast<size_t>(n), -1);
    std::vector<std::vector<int64_t>> out;
    std::vector<int64_t> stack;
    for (int64_t start = 0; start < n; ++start) {
        if (component[static_cast<size_t>(start)] >= 0 ||
            !labels::is_clutter(sem.data[static_cast<size_t>(start)])) {
            continue;
        }
        const int64_t id = static_cast<int64_t>(out.size());
        out.emplace_back();
        stack.assign(1, start);
        component[static_cast<size_t>(start)] = id;
        while (!stack.empty()) {
            const int64_t p = stack.back();
            stack.pop_back();
            out.back().push_back(p);
            const int64_t y = p / sem.width;
            const int64_t x = p % sem.width;
            const int64_t nbrs[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
            for (const auto& nb : nbrs) {
                if (nb[0] < 0 || nb[0] >= sem.height || nb[1] < 0 || nb[1] >= sem.width) {
                    continue;
                }
                const int64_t q = nb[0] * sem.width + nb[1];
                if (component[static_cast<size_t>(q)] < 0 &&
                    labels::is_clutter(sem.data[static_cast<size_t>(q)])) {
                    component[static_cast<size_t>(q)] = id;
                    stack.push_back(q);
                }
            }
        }
    }
    return out;
}

}  // namespace

bool labels::is_clutter(int32_t label) {
    return label != kUnlabeled && label != kWall && label != kFloor && label != kCeiling;
}

int64_t HoleMask::count() const {
    return static_cast<int64_t>(std::count(data.begin(), data.end(), uint8_t{1}));
}

torch::Tensor HoleMask::to_tensor() const {
    auto t = torch::empty({1, 1, height, width}, torch::kFloat32);
    auto* p = t.data_ptr<float>();
    for (size_t i = 0; i < data.size(); ++i) {
        p[i] = data[i] ? 1.0f : 0.0f;
    }
    return t;
}

HoleMask HoleMask::from_tensor(const torch::Tensor& t) {
    auto flat = t.detach().to(torch::kFloat32).contiguous();
    if (flat.dim() < 2) {
        throw PreconditionError("HoleMask::from_tensor: need at least 2 dims");
    }
    const int64_t h = flat.size(-2);
    const int64_t w = flat.size(-1);
    if (flat.numel() != h * w) {
        throw PreconditionError("HoleMask::from_tensor: expected a single-channel mask");
    }
    HoleMask m(h, w);
    const auto* p = flat.data_ptr<float>();
    for (int64_t i = 0; i < h * w; ++i) {
        if (p[i] != 0.0f && p[i] != 1.0f) {
            throw PreconditionError("HoleMask::from_tensor: mask must be binary");
        }
        m.data[static_cast<size_t>(i)] = p[i] != 0.0f;
    }
    return m;
}

const char* mask_kind_name(MaskKind kind) {
    switch (kind) {
    case MaskKind::Irregular: return "irregular";
    case MaskKind::Rectangular: return "rectangular";
    case MaskKind::Segmentation: return "segmentation";
    case MaskKind::Outpainting: return "outpainting";
    case MaskKind::Quadrants: return "quadrants";
    }
    return "unknown";
}

MaskKind parse_mask_kind(const std::string& name) {
    for (auto k : kAllMaskKinds) {
        if (name == mask_kind_name(k)) {
            return k;
        }
    }
    throw PreconditionError("unknown mask kind '" + name +
                            "' (expected irregular, rectangular, segmentation, outpainting or "
                            "quadrants)");
}

std::string RatioInterval::label() const {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%d-%d", static_cast<int>(std::lround(lo * 100)),
                  static_cast<int>(std::lround(hi * 100)));
    return buf;
}

std::vector<RatioInterval> evaluation_intervals() {
    return {{0.01, 0.10}, {0.10, 0.20}, {0.20, 0.30}, {0.30, 0.40}, {0.40, 0.50}};
}

double mask_ratio(const HoleMask& mask) {
    if (mask.data.empty()) {
        return 0.0;
    }
    return static_cast<double>(mask.count()) / static_cast<double>(mask.data.size());
}

HoleMask irregular_mask(int64_t height, int64_t width, RatioInterval interval, Rng& rng) {
    require_dims(height, width, "irregular_mask");
    require_interval(interval, "irregular_mask");
    const double total = static_cast<double>(height * width);
    const double scale = std::max(static_cast<double>(width) / kReferenceWidth, 0.0);
    const double min_w = std::max(1.0, kMinStrokeWidth * scale);
    const double max_w = std::max(min_w, kMaxStrokeWidth * scale);
    const double max_len = std::max(4.0, static_cast<double>(width) / 4.0);

    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        HoleMask mask(height, width);
        const double target = uniform(rng, interval.lo, interval.hi);
        int64_t filled = 0;
        bool reached = false;
        // Strokes are drawn until the target ratio is reached; the stroke
        // budget restarts the attempt if the target is not met.
        for (int stroke = 0; stroke < kMaxStrokes * 4 && !reached; ++stroke) {
            const int vertices = static_cast<int>(uniform_int(rng, kMinVertices, kMaxVertices));
            const double radius = uniform(rng, min_w, max_w) / 2.0;
            double y = uniform(rng, 0.0, static_cast<double>(height - 1));
            double x = uniform(rng, 0.0, static_cast<double>(width));
            for (int v = 0; v < vertices && !reached; ++v) {
                const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
                const double len = uniform(rng, max_len / 4.0, max_len);
                const double ny = std::clamp(y + len * std::sin(angle), 0.0,
                                             static_cast<double>(height - 1));
                const double nx = x + len * std::cos(angle);
                const double dist = std::hypot(ny - y, nx - x);
                const int steps = std::max(1, static_cast<int>(std::ceil(dist * 2.0)));
                for (int s = 0; s <= steps; ++s) {
                    const double t = static_cast<double>(s) / steps;
                    filled += stamp_disk(mask, y + t * (ny - y), x + t * (nx - x), radius);
                    if (static_cast<double>(filled) / total >= target) {
                        reached = true;
                        break;
                    }
                }
                y = ny;
                x = std::fmod(nx + width, static_cast<double>(width));
            }
        }
        if (reached && interval.contains(mask_ratio(mask))) {
            return mask;
        }
    }
    fail_interval("irregular_mask", interval);
}

HoleMask rectangular_mask(int64_t height, int64_t width, RatioInterval interval, Rng& rng) {
    require_dims(height, width, "rectangular_mask");
    require_interval(interval, "rectangular_mask");
    const double total = static_cast<double>(height * width);
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        HoleMask mask(height, width);
        const double target = uniform(rng, interval.lo, interval.hi);
        int64_t filled = 0;
        for (int rect = 0; rect < 64 && static_cast<double>(filled) / total < target; ++rect) {
            // Cap the area so a single rectangle cannot push the ratio past hi.
            const double budget = interval.hi * total - static_cast<double>(filled) - 1.0;
            if (budget < 1.0) {
                break;
            }
            const double area = std::min(budget, uniform(rng, 0.3, 1.0) *
                                                     std::max(1.0, (target * total - filled) * 1.5));
            const double aspect = std::exp(uniform(rng, std::log(0.25), std::log(4.0)));
            int64_t rw = std::clamp<int64_t>(static_cast<int64_t>(std::sqrt(area * aspect)), 1, width);
            int64_t rh = std::clamp<int64_t>(static_cast<int64_t>(area / rw), 1, height);
            while (static_cast<double>(rw * rh) > budget && (rw > 1 || rh > 1)) {
                (rw >= rh ? rw : rh) -= 1;
            }
            const int64_t y0 = uniform_int(rng, 0, height - rh);
            const int64_t x0 = uniform_int(rng, 0, width - rw);
            for (int64_t y = y0; y < y0 + rh; ++y) {
                for (int64_t x = x0; x < x0 + rw; ++x) {
                    auto& px = mask.at(y, x);
                    if (!px) {
                        px = 1;
                        ++filled;
                    }
                }
            }
        }
        if (interval.contains(mask_ratio(mask))) {
            return mask;
        }
    }
    fail_interval("rectangular_mask", interval);
}

HoleMask dilate(const HoleMask& mask) {
    HoleMask out(mask.height, mask.width);
    for (int64_t y = 0; y < mask.height; ++y) {
        for (int64_t x = 0; x < mask.width; ++x) {
            uint8_t v = 0;
            for (int64_t dy = -1; dy <= 1 && !v; ++dy) {
                const int64_t yy = y + dy;
                if (yy < 0 || yy >= mask.height) {
                    continue;
                }
                for (int64_t dx = -1; dx <= 1; ++dx) {
                    const int64_t xx = ((x + dx) % mask.width + mask.width) % mask.width;
                    if (mask.at(yy, xx)) {
                        v = 1;
                        break;
                    }
                }
            }
            out.at(y, x) = v;
        }
    }
    return out;
}

SegmentationResult segmentation_mask(const LabelMap& semantics, RatioInterval interval,
                                     Rng& rng) {
    require_dims(semantics.height, semantics.width, "segmentation_mask");
    require_interval(interval, "segmentation_mask");
    SegmentationResult result;
    auto components = clutter_components(semantics);
    if (components.empty()) {
        result.mask = rectangular_mask(semantics.height, semantics.width, interval, rng);
        result.used_fallback = true;
        result.ratio_trace.push_back(mask_ratio(result.mask));
        return result;
    }

    const double total = static_cast<double>(semantics.height * semantics.width);
    HoleMask mask(semantics.height, semantics.width);
    int64_t clutter = 0;
    for (const auto& c : components) {
        clutter += static_cast<int64_t>(c.size());
    }
    if (static_cast<double>(clutter) / total < interval.hi) {
        for (const auto& c : components) {
            for (auto p : c) {
                mask.data[static_cast<size_t>(p)] = 1;
            }
        }
    } else {
        // All clutter would overshoot: keep a random subset of objects.
        std::shuffle(components.begin(), components.end(), rng);
        int64_t filled = 0;
        for (const auto& c : components) {
            if (static_cast<double>(filled + static_cast<int64_t>(c.size())) / total < interval.hi) {
                for (auto p : c) {
                    mask.data[static_cast<size_t>(p)] = 1;
                }
                filled += static_cast<int64_t>(c.size());
            }
        }
        if (filled == 0) {
            const auto smallest = std::min_element(
                components.begin(), components.end(),
                [](const auto& a, const auto& b) { return a.size() < b.size(); });
            for (auto p : *smallest) {
                mask.data[static_cast<size_t>(p)] = 1;
            }
        }
    }

    result.ratio_trace.push_back(mask_ratio(mask));
    while (mask_ratio(mask) < interval.lo) {
        auto next = dilate(mask);
        if (next == mask) {
            break;
        }
        mask = std::move(next);
        result.ratio_trace.push_back(mask_ratio(mask));
    }
    result.mask = std::move(mask);
    return result;
}

HoleMask outpainting_mask(int64_t height, int64_t width, RatioInterval interval, Rng& rng) {
    require_dims(height, width, "outpainting_mask");
    require_interval(interval, "outpainting_mask");
    // Edge order: left, right, top, bottom. The band covers `t` of `extent`
    // rows or columns, so its ratio is t / extent.
    auto thickness_range = [&](int64_t extent) {
        const auto lo = static_cast<int64_t>(std::ceil(interval.lo * extent - 1e-9));
        const auto hi = static_cast<int64_t>(std::ceil(interval.hi * extent - 1e-9)) - 1;
        return std::pair<int64_t, int64_t>{std::max<int64_t>(lo, 1), hi};
    };
    std::vector<int> edges = {0, 1, 2, 3};
    std::shuffle(edges.begin(), edges.end(), rng);
    for (int edge : edges) {
        const int64_t extent = edge < 2 ? width : height;
        auto [lo, hi] = thickness_range(extent);
        if (lo > hi) {
            continue;
        }
        const int64_t t = uniform_int(rng, lo, hi);
        HoleMask mask(height, width);
        for (int64_t y = 0; y < height; ++y) {
            for (int64_t x = 0; x < width; ++x) {
                const bool in = edge == 0   ? x < t
                                : edge == 1 ? x >= width - t
                                : edge == 2 ? y < t
                                            : y >= height - t;
                mask.at(y, x) = in;
            }
        }
        return mask;
    }
    throw PreconditionError("outpainting_mask: no band thickness of a " + std::to_string(width) +
                            "x" + std::to_string(height) + " image lands in [" +
                            std::to_string(interval.lo) + ", " + std::to_string(interval.hi) + ")");
}

HoleMask quadrant_mask(int64_t height, int64_t width, RatioInterval interval, Rng& rng) {
    require_dims(height, width, "quadrant_mask");
    require_interval(interval, "quadrant_mask");
    const double total = static_cast<double>(height * width);
    // Strictly smaller than the image on both axes, so exactly one corner is
    // covered and the mask never degenerates into an outpainting band.
    const int64_t max_h = std::max<int64_t>(1, height - 1);
    const int64_t max_w = std::max<int64_t>(1, width - 1);
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        const int64_t rh = uniform_int(rng, 1, max_h);
        const auto w_lo = std::max<int64_t>(
            1, static_cast<int64_t>(std::ceil(interval.lo * total / rh - 1e-9)));
        const auto w_hi = std::min<int64_t>(
            max_w, static_cast<int64_t>(std::ceil(interval.hi * total / rh - 1e-9)) - 1);
        if (w_lo > w_hi) {
            continue;
        }
        const int64_t rw = uniform_int(rng, w_lo, w_hi);
        const int corner = static_cast<int>(uniform_int(rng, 0, 3));
        const int64_t y0 = (corner & 2) ? height - rh : 0;
        const int64_t x0 = (corner & 1) ? width - rw : 0;
        HoleMask mask(height, width);
        for (int64_t y = y0; y < y0 + rh; ++y) {
            for (int64_t x = x0; x < x0 + rw; ++x) {
                mask.at(y, x) = 1;
            }
        }
        if (interval.contains(mask_ratio(mask))) {
            return mask;
        }
    }
    fail_interval("quadrant_mask", interval);
}

HoleMask generate_mask(const MaskSpec& spec, const LabelMap* semantics) {
    Rng rng(spec.seed);
    switch (spec.kind) {
    case MaskKind::Irregular: return irregular_mask(spec.height, spec.width, spec.interval, rng);
    case MaskKind::Rectangular: return rectangular_mask(spec.height, spec.width, spec.interval, rng);
    case MaskKind::Outpainting: return outpainting_mask(spec.height, spec.width, spec.interval, rng);
    case MaskKind::Quadrants: return quadrant_mask(spec.height, spec.width, spec.interval, rng);
    case MaskKind::Segmentation:
        if (semantics == nullptr) {
            throw PreconditionError("segmentation masks need a semantic map");
        }
        if (semantics->height != spec.height || semantics->width != spec.width) {
            throw PreconditionError("segmentation_mask: semantic map dims differ from mask dims");
        }
        return segmentation_mask(*semantics, spec.interval, rng).mask;
    }
    throw PreconditionError("unknown mask kind");
}

HoleMask sample_training_mask(Rng& rng, int64_t height, int64_t width, const LabelMap* semantics,
                              const TrainingMaskPolicy& policy, MaskKind* chosen_kind) {
    std::vector<MaskKind> kinds = {MaskKind::Irregular, MaskKind::Rectangular,
                                   MaskKind::Outpainting, MaskKind::Quadrants};
    if (semantics != nullptr) {
        kinds.push_back(MaskKind::Segmentation);
    }
    const MaskKind kind = kinds[static_cast<size_t>(
        uniform_int(rng, 0, static_cast<int64_t>(kinds.size()) - 1))];
    if (chosen_kind) {
        *chosen_kind = kind;
    }
    const double r = uniform(rng, policy.ratio_min, policy.ratio_max);
    const double half = policy.interval_width / 2.0;
    RatioInterval interval{std::max(policy.ratio_min, r - half),
                           std::min(policy.ratio_max, r + half)};
    switch (kind) {
    case MaskKind::Irregular: return irregular_mask(height, width, interval, rng);
    case MaskKind::Rectangular: return rectangular_mask(height, width, interval, rng);
    case MaskKind::Outpainting: return outpainting_mask(height, width, interval, rng);
    case MaskKind::Quadrants: return quadrant_mask(height, width, interval, rng);
    case MaskKind::Segmentation: return segmentation_mask(*semantics, interval, rng).mask;
    }
    return rectangular_mask(height, width, interval, rng);
}

}  // namespace wfm
