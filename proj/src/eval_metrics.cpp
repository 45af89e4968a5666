#include "wfm/eval_metrics.hpp"

#include "wfm/error.hpp"
#include "wfm/generator.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace wfm {

namespace {

torch::Tensor as_double(const torch::Tensor& t) { return t.detach().to(torch::kFloat64); }

void require_same_shape(const torch::Tensor& x, const torch::Tensor& y, const char* op) {
    if (x.sizes() != y.sizes()) {
        throw PreconditionError(std::string(op) + ": shapes differ, " + c10::str(x.sizes()) +
                                " vs " + c10::str(y.sizes()));
    }
    if (x.numel() == 0) {
        throw PreconditionError(std::string(op) + ": empty input");
    }
}

torch::Tensor gaussian_window() {
    constexpr int kSize = 11;
    constexpr double kSigma = 1.5;
    auto g = torch::empty({kSize}, torch::kFloat64);
    double sum = 0.0;
    for (int i = 0; i < kSize; ++i) {
        const double d = i - kSize / 2;
        g[i] = std::exp(-d * d / (2 * kSigma * kSigma));
        sum += std::exp(-d * d / (2 * kSigma * kSigma));
    }
    g /= sum;
    return torch::outer(g, g).view({1, 1, kSize, kSize});
}

uint64_t fnv1a(uint64_t h, const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

}  // namespace

double mae(const torch::Tensor& x, const torch::Tensor& y) {
    require_same_shape(x, y, "mae");
    return (as_double(x) - as_double(y)).abs().mean().item<double>();
}

double psnr(const torch::Tensor& x, const torch::Tensor& y) {
    require_same_shape(x, y, "psnr");
    const double mse = (as_double(x) - as_double(y)).square().mean().item<double>();
    if (mse <= 0.0) {
        return kPsnrCap;
    }
    return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

double ssim(const torch::Tensor& x, const torch::Tensor& y) {
    require_same_shape(x, y, "ssim");
    auto a = as_double(x);
    auto b = as_double(y);
    if (a.dim() == 4 && a.size(0) == 1) {
        a = a.squeeze(0);
        b = b.squeeze(0);
    }
    if (a.dim() != 3) {
        throw PreconditionError("ssim: expected C x H x W input, got " + c10::str(x.sizes()));
    }
    if (a.size(1) < 11 || a.size(2) < 11) {
        throw PreconditionError("ssim: images must be at least 11 x 11");
    }
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    // Channels become the batch so every channel is filtered separately.
    a = a.unsqueeze(1);
    b = b.unsqueeze(1);
    const auto w = gaussian_window();
    auto filt = [&w](const torch::Tensor& t) { return torch::conv2d(t, w); };
    const auto mu_a = filt(a);
    const auto mu_b = filt(b);
    const auto var_a = filt(a * a) - mu_a * mu_a;
    const auto var_b = filt(b * b) - mu_b * mu_b;
    const auto cov = filt(a * b) - mu_a * mu_b;
    const auto map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                     ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
    return map.mean({1, 2, 3}).mean().item<double>();
}

const CellMetrics& MetricsReport::cell(MaskKind kind, RatioInterval interval) const {
    for (const auto& c : cells) {
        if (c.kind == kind && c.interval.lo == interval.lo && c.interval.hi == interval.hi) {
            return c;
        }
    }
    throw PreconditionError(std::string("report has no cell ") + mask_kind_name(kind) + " " +
                            interval.label());
}

EvalGrid EvalGrid::full() {
    return {{std::begin(kAllMaskKinds), std::end(kAllMaskKinds)}, evaluation_intervals()};
}

EvalGrid EvalGrid::validation() {
    return {{MaskKind::Rectangular, MaskKind::Segmentation}, {{0.10, 0.20}, {0.30, 0.40}}};
}

uint64_t evaluation_mask_seed(uint64_t base, const std::string& scene_id, MaskKind kind,
                              RatioInterval interval) {
    uint64_t h = 14695981039346656037ull;
    h = fnv1a(h, &base, sizeof(base));
    h = fnv1a(h, scene_id.data(), scene_id.size());
    const auto k = static_cast<int32_t>(kind);
    h = fnv1a(h, &k, sizeof(k));
    h = fnv1a(h, &interval.lo, sizeof(double));
    h = fnv1a(h, &interval.hi, sizeof(double));
    return h;
}

MetricsReport evaluate(const InpaintFn& model, const SceneSource& source, const EvalGrid& grid,
                       const EvalOptions& options) {
    size_t n = source.size();
    if (options.max_scenes > 0) {
        n = std::min(n, options.max_scenes);
    }
    if (n == 0) {
        throw PreconditionError("evaluate: dataset is empty");
    }
    if (grid.kinds.empty() || grid.intervals.empty()) {
        throw PreconditionError("evaluate: empty evaluation grid");
    }
    torch::NoGradGuard no_grad;

    struct Sample {
        double mae, psnr, ssim;
    };
    // cell index -> scene id -> metrics; the map keeps ids sorted.
    const size_t n_cells = grid.kinds.size() * grid.intervals.size();
    std::vector<std::map<std::string, Sample>> per_cell(n_cells);

    for (size_t s = 0; s < n; ++s) {
        const auto pair = source.get(s);
        const auto image = pair.empty.unsqueeze(0);
        size_t c = 0;
        for (auto kind : grid.kinds) {
            for (auto interval : grid.intervals) {
                MaskSpec spec{kind, interval, image.size(2), image.size(3),
                              evaluation_mask_seed(options.seed, pair.id, kind, interval)};
                const auto mask = generate_mask(spec, &pair.semantics).to_tensor();
                auto out = model(image, mask).detach().to(torch::kFloat32);
                if (options.composite) {
                    out = composite(image, out, mask);
                }
                per_cell[c++][pair.id] = {mae(image, out), psnr(image, out), ssim(image, out)};
            }
        }
    }

    MetricsReport report;
    report.composite = options.composite;
    size_t c = 0;
    for (auto kind : grid.kinds) {
        for (auto interval : grid.intervals) {
            CellMetrics cell{kind, interval, 0, 0, 0, 0};
            for (const auto& [id, m] : per_cell[c]) {
                cell.mae += m.mae;
                cell.psnr += m.psnr;
                cell.ssim += m.ssim;
                ++cell.count;
            }
            cell.mae /= static_cast<double>(cell.count);
            cell.psnr /= static_cast<double>(cell.count);
            cell.ssim /= static_cast<double>(cell.count);
            report.cells.push_back(cell);
            ++c;
        }
    }
    return report;
}

std::string report_to_csv(const MetricsReport& report) {
    std::ostringstream out;
    out << "kind,interval,mae,psnr,ssim,n\n";
    for (const auto& c : report.cells) {
        out << mask_kind_name(c.kind) << "," << c.interval.label() << ","
            << fmt("%.6f", c.mae) << "," << fmt("%.4f", c.psnr) << "," << fmt("%.6f", c.ssim)
            << "," << c.count << "\n";
    }
    return out.str();
}

std::string report_to_json(const MetricsReport& report) {
    nlohmann::json j;
    j["composite"] = report.composite;
    j["cells"] = nlohmann::json::array();
    for (const auto& c : report.cells) {
        j["cells"].push_back({{"kind", mask_kind_name(c.kind)},
                              {"lo", c.interval.lo},
                              {"hi", c.interval.hi},
                              {"mae", c.mae},
                              {"psnr", c.psnr},
                              {"ssim", c.ssim},
                              {"n", c.count}});
    }
    return j.dump(2) + "\n";
}

MetricsReport report_from_json(const std::string& text) {
    MetricsReport report;
    try {
        const auto j = nlohmann::json::parse(text);
        report.composite = j.value("composite", false);
        for (const auto& c : j.at("cells")) {
            report.cells.push_back(CellMetrics{parse_mask_kind(c.at("kind").get<std::string>()),
                                               {c.at("lo").get<double>(), c.at("hi").get<double>()},
                                               c.at("mae").get<double>(),
                                               c.at("psnr").get<double>(),
                                               c.at("ssim").get<double>(),
                                               c.at("n").get<int64_t>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed metrics JSON: ") + e.what());
    }
    return report;
}

std::string report_to_markdown(const MetricsReport& report) {
    std::vector<RatioInterval> intervals;
    std::vector<MaskKind> kinds;
    for (const auto& c : report.cells) {
        if (std::none_of(intervals.begin(), intervals.end(), [&](const RatioInterval& i) {
                return i.lo == c.interval.lo && i.hi == c.interval.hi;
            })) {
            intervals.push_back(c.interval);
        }
        if (std::find(kinds.begin(), kinds.end(), c.kind) == kinds.end()) {
            kinds.push_back(c.kind);
        }
    }
    std::ostringstream out;
    out << "| Mask |";
    for (const auto& i : intervals) {
        out << " " << i.label() << "% MAE | PSNR | SSIM |";
    }
    out << "\n|---|";
    for (size_t i = 0; i < intervals.size(); ++i) {
        out << "---|---|---|";
    }
    out << "\n";
    for (auto kind : kinds) {
        out << "| " << mask_kind_name(kind) << " |";
        for (const auto& i : intervals) {
            const auto& c = report.cell(kind, i);
            out << " " << fmt("%.4f", c.mae) << " | " << fmt("%.3f", c.psnr) << " | "
                << fmt("%.4f", c.ssim) << " |";
        }
        out << "\n";
    }
    return out.str();
}

}  // namespace wfm
