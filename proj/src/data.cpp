#include "wfm/data.hpp"

#include "wfm/error.hpp"
#include "wfm/image_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>

namespace fs = std::filesystem;

namespace wfm {

namespace {

struct Vec3 {
    double x, y, z;
};

struct Color {
    float r, g, b;
};

Color random_color(Rng& rng, int lo, int hi) {
    std::uniform_int_distribution<int> d(lo, hi);
    const int r = d(rng), g = d(rng), b = d(rng);
    return {r / 255.0f, g / 255.0f, b / 255.0f};
}

// Shading is applied in 8-bit space so renders survive a PNG round trip.
Color shade(Color c, double factor) {
    auto q = [factor](float v) {
        return static_cast<float>(std::round(std::clamp(v * factor, 0.0, 1.0) * 255.0) / 255.0);
    };
    return {q(c.r), q(c.g), q(c.b)};
}

struct Box {
    double x0, x1, y0, y1, z0, z1;
    Color color;
    int32_t label;
};

// Slab test; returns the entry distance and the axis of the entry face.
bool intersect_box(const Box& b, const Vec3& d, double& t_hit, int& face) {
    double t_near = 0.0;
    double t_far = std::numeric_limits<double>::infinity();
    const double lo[3] = {b.x0, b.y0, b.z0};
    const double hi[3] = {b.x1, b.y1, b.z1};
    const double dir[3] = {d.x, d.y, d.z};
    face = -1;
    for (int a = 0; a < 3; ++a) {
        if (std::abs(dir[a]) < 1e-12) {
            if (0.0 < lo[a] || 0.0 > hi[a]) {
                return false;
            }
            continue;
        }
        double t0 = lo[a] / dir[a];
        double t1 = hi[a] / dir[a];
        if (t0 > t1) {
            std::swap(t0, t1);
        }
        if (t0 > t_near) {
            t_near = t0;
            face = a;
        }
        t_far = std::min(t_far, t1);
        if (t_near > t_far) {
            return false;
        }
    }
    t_hit = t_near;
    return face >= 0;
}

int32_t random_clutter_label(Rng& rng) {
    std::uniform_int_distribution<int32_t> d(3, 40);
    int32_t label = d(rng);
    while (label == labels::kCeiling) {
        label = d(rng);
    }
    return label;
}

void put(float* img, int64_t plane, int64_t idx, Color c) {
    img[idx] = c.r;
    img[plane + idx] = c.g;
    img[2 * plane + idx] = c.b;
}

std::string toy_id(size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "toy_%05zu", index);
    return buf;
}

Rng scene_rng(uint64_t seed, size_t index) {
    std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                      static_cast<uint32_t>(index)};
    return Rng(seq);
}

LabelMap labels_from_gray(const GrayImage& g) {
    LabelMap out(g.height, g.width);
    std::copy(g.data.begin(), g.data.end(), out.data.begin());
    return out;
}

torch::Tensor resize_area(const torch::Tensor& image, int64_t height, int64_t width) {
    if (image.size(1) == height && image.size(2) == width) {
        return image;
    }
    namespace F = torch::nn::functional;
    return F::interpolate(image.unsqueeze(0), F::InterpolateFuncOptions()
                                                  .size(std::vector<int64_t>{height, width})
                                                  .mode(torch::kArea))
        .squeeze(0);
}

LabelMap resize_nearest(const LabelMap& in, int64_t height, int64_t width) {
    if (in.height == height && in.width == width) {
        return in;
    }
    LabelMap out(height, width);
    for (int64_t y = 0; y < height; ++y) {
        const int64_t sy = std::min(in.height - 1, y * in.height / height);
        for (int64_t x = 0; x < width; ++x) {
            out.at(y, x) = in.at(sy, std::min(in.width - 1, x * in.width / width));
        }
    }
    return out;
}

}  // namespace

ScenePair toy_scene(Rng& rng, int64_t height, int64_t width) {
    if (height < 32) {
        throw PreconditionError("toy_scene: height must be >= 32, got " + std::to_string(height));
    }
    if (width != 2 * height) {
        throw PreconditionError("toy_scene: equirectangular panoramas need width == 2 * height, "
                                "got " + std::to_string(width) + "x" + std::to_string(height));
    }
    auto uni = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

    // Room extents around the camera at the origin.
    const double x_lo = -uni(1.5, 4.0), x_hi = uni(1.5, 4.0);
    const double z_lo = -uni(1.5, 4.0), z_hi = uni(1.5, 4.0);
    const double floor_y = -uni(1.2, 1.8);
    const double ceil_y = floor_y + uni(2.4, 3.2);
    const double cell = uni(0.3, 0.7);
    const double stripe = uni(0.2, 0.6);
    const Color floor_a = random_color(rng, 90, 200), floor_b = random_color(rng, 30, 120);
    const Color wall_a = random_color(rng, 140, 240), wall_b = random_color(rng, 80, 180);
    const Color ceiling = random_color(rng, 200, 255);

    std::vector<Box> boxes;
    const int n_boxes = std::uniform_int_distribution<int>(1, 5)(rng);
    while (static_cast<int>(boxes.size()) < n_boxes) {
        const double sx = uni(0.3, 1.2), sz = uni(0.3, 1.2);
        const double cx = uni(x_lo + sx / 2 + 0.05, x_hi - sx / 2 - 0.05);
        const double cz = uni(z_lo + sz / 2 + 0.05, z_hi - sz / 2 - 0.05);
        // Keep the camera outside every box.
        if (std::abs(cx) < sx / 2 + 0.3 && std::abs(cz) < sz / 2 + 0.3) {
            continue;
        }
        const double h = uni(0.3, std::min(1.5, ceil_y - floor_y - 0.5));
        boxes.push_back(Box{cx - sx / 2, cx + sx / 2, floor_y, floor_y + h, cz - sz / 2,
                            cz + sz / 2, random_color(rng, 20, 255), random_clutter_label(rng)});
    }

    ScenePair pair;
    pair.empty = torch::empty({3, height, width}, torch::kFloat32);
    pair.cluttered = torch::empty({3, height, width}, torch::kFloat32);
    pair.semantics = LabelMap(height, width);
    float* empty = pair.empty.data_ptr<float>();
    float* full = pair.cluttered.data_ptr<float>();
    const int64_t plane = height * width;
    const double inf = std::numeric_limits<double>::infinity();

    for (int64_t v = 0; v < height; ++v) {
        const double lat = std::numbers::pi / 2 - (v + 0.5) / height * std::numbers::pi;
        for (int64_t u = 0; u < width; ++u) {
            const double lon = (u + 0.5) / width * 2 * std::numbers::pi - std::numbers::pi;
            const Vec3 d{std::cos(lat) * std::sin(lon), std::sin(lat),
                         std::cos(lat) * std::cos(lon)};
            const double tx = d.x > 0 ? x_hi / d.x : d.x < 0 ? x_lo / d.x : inf;
            const double tz = d.z > 0 ? z_hi / d.z : d.z < 0 ? z_lo / d.z : inf;
            const double ty = d.y > 0 ? ceil_y / d.y : d.y < 0 ? floor_y / d.y : inf;
            const double t = std::min({tx, ty, tz});
            const Vec3 p{t * d.x, t * d.y, t * d.z};

            Color c;
            int32_t label;
            if (t == ty && d.y < 0) {
                const auto gx = static_cast<int64_t>(std::floor(p.x / cell));
                const auto gz = static_cast<int64_t>(std::floor(p.z / cell));
                c = ((gx + gz) & 1) ? floor_a : floor_b;
                label = labels::kFloor;
            } else if (t == ty) {
                c = ceiling;
                label = labels::kCeiling;
            } else {
                const double along = t == tx ? p.z : p.x;
                c = (static_cast<int64_t>(std::floor(along / stripe)) & 1) ? wall_a : wall_b;
                label = labels::kWall;
            }
            const int64_t idx = v * width + u;
            put(empty, plane, idx, c);

            double best = t;
            for (const auto& b : boxes) {
                double tb;
                int face;
                if (intersect_box(b, d, tb, face) && tb < best) {
                    best = tb;
                    c = shade(b.color, face == 1 ? 1.0 : face == 0 ? 0.8 : 0.65);
                    label = b.label;
                }
            }
            put(full, plane, idx, c);
            pair.semantics.data[static_cast<size_t>(idx)] = label;
        }
    }
    return pair;
}

ToyCorpus::ToyCorpus(size_t count, int64_t height, int64_t width, uint64_t seed) {
    scenes_.reserve(count);
    for (size_t i = 0; i < count; ++i) {
        Rng rng = scene_rng(seed, i);
        auto pair = toy_scene(rng, height, width);
        pair.id = toy_id(i);
        scenes_.push_back(std::move(pair));
    }
}

std::string ToyCorpus::id(size_t index) const { return scenes_.at(index).id; }

ScenePair ToyCorpus::get(size_t index) const { return scenes_.at(index); }

void write_toy_corpus(const std::string& dir, size_t count, int64_t height, int64_t width,
                      uint64_t seed) {
    fs::create_directories(dir);
    nlohmann::json index;
    index["height"] = height;
    index["width"] = width;
    index["seed"] = seed;
    index["scenes"] = nlohmann::json::array();
    for (size_t i = 0; i < count; ++i) {
        Rng rng = scene_rng(seed, i);
        const auto pair = toy_scene(rng, height, width);
        const std::string id = toy_id(i);
        write_png_rgb((fs::path(dir) / (id + "_empty.png")).string(), pair.empty);
        write_png_rgb((fs::path(dir) / (id + "_full.png")).string(), pair.cluttered);
        GrayImage sem{height, width, {}};
        sem.data.assign(pair.semantics.data.begin(), pair.semantics.data.end());
        write_png_gray((fs::path(dir) / (id + "_sem.png")).string(), sem);
        index["scenes"].push_back({{"id", id},
                                   {"empty", id + "_empty.png"},
                                   {"cluttered", id + "_full.png"},
                                   {"semantics", id + "_sem.png"}});
    }
    std::ofstream out(fs::path(dir) / "index.json");
    out << index.dump(2) << "\n";
    if (!out) {
        throw IoError("cannot write " + (fs::path(dir) / "index.json").string());
    }
}

ToyDirCorpus::ToyDirCorpus(const std::string& dir) : dir_(dir) {
    std::ifstream in(fs::path(dir) / "index.json");
    if (!in) {
        throw IoError("toy corpus '" + dir + "' has no index.json");
    }
    nlohmann::json index;
    try {
        index = nlohmann::json::parse(in);
        for (const auto& s : index.at("scenes")) {
            entries_.push_back({s.at("id").get<std::string>(), s.at("empty").get<std::string>(),
                                s.at("cluttered").get<std::string>(),
                                s.at("semantics").get<std::string>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed index.json in '" + dir + "': " + e.what());
    }
}

std::string ToyDirCorpus::id(size_t index) const { return entries_.at(index).id; }

ScenePair ToyDirCorpus::get(size_t index) const {
    const auto& e = entries_.at(index);
    const fs::path root(dir_);
    ScenePair pair;
    pair.id = e.id;
    pair.empty = read_png_rgb((root / e.empty).string());
    pair.cluttered = read_png_rgb((root / e.cluttered).string());
    pair.semantics = labels_from_gray(read_png_gray((root / e.semantics).string()));
    if (pair.empty.sizes() != pair.cluttered.sizes() ||
        pair.semantics.height != pair.empty.size(1) || pair.semantics.width != pair.empty.size(2)) {
        throw IoError("scene '" + e.id + "': empty, cluttered and semantics dims differ");
    }
    return pair;
}

const char* split_name(Split split) {
    switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
    }
    return "unknown";
}

Split parse_split(const std::string& name) {
    for (auto s : {Split::Train, Split::Val, Split::Test}) {
        if (name == split_name(s)) {
            return s;
        }
    }
    throw PreconditionError("unknown split '" + name + "' (expected train, val or test)");
}

SplitSpec split_spec(Split split) {
    switch (split) {
    case Split::Train: return {Split::Train, 0, 2999, 18362};
    case Split::Val: return {Split::Val, 3000, 3249, 1776};
    case Split::Test: return {Split::Test, 3250, 3499, 1697};
    }
    throw PreconditionError("unknown split");
}

int32_t palette::decode(uint8_t r, uint8_t g, uint8_t b) {
    const std::array<uint8_t, 3> c{r, g, b};
    if (c == kWall) {
        return labels::kWall;
    }
    if (c == kFloor) {
        return labels::kFloor;
    }
    if (c == kCeiling) {
        return labels::kCeiling;
    }
    if (r == 0 && g == 0 && b == 0) {
        return labels::kUnlabeled;
    }
    return kGenericClutter;
}

Structured3DSplit::Structured3DSplit(const std::string& root, Split split,
                                     Structured3DOptions options, const LogFn& log)
    : options_(std::move(options)) {
    if (options_.lighting != "raw" && options_.lighting != "cold" && options_.lighting != "warm") {
        throw ConfigError("Structured3D lighting must be raw, cold or warm, got '" +
                          options_.lighting + "'");
    }
    fs::path base(root);
    if (!fs::is_directory(base)) {
        throw IoError("dataset root '" + root + "' is not a directory");
    }
    if (fs::is_directory(base / "Structured3D")) {
        base /= "Structured3D";
    }
    const auto spec = split_spec(split);
    const std::string rgb = "rgb_" + options_.lighting + "light.png";

    std::vector<fs::path> scenes;
    for (const auto& entry : fs::directory_iterator(base)) {
        const auto name = entry.path().filename().string();
        int index = -1;
        if (entry.is_directory() && std::sscanf(name.c_str(), "scene_%d", &index) == 1 &&
            index >= spec.first_scene && index <= spec.last_scene) {
            scenes.push_back(entry.path());
        }
    }
    std::sort(scenes.begin(), scenes.end());
    for (const auto& scene : scenes) {
        const auto rendering = scene / "2D_rendering";
        if (!fs::is_directory(rendering)) {
            continue;
        }
        std::vector<fs::path> rooms;
        for (const auto& r : fs::directory_iterator(rendering)) {
            if (r.is_directory()) {
                rooms.push_back(r.path());
            }
        }
        // Room ids are integers; order numerically when possible.
        std::sort(rooms.begin(), rooms.end(), [](const fs::path& a, const fs::path& b) {
            const auto sa = a.filename().string(), sb = b.filename().string();
            return sa.size() != sb.size() ? sa.size() < sb.size() : sa < sb;
        });
        for (const auto& room : rooms) {
            const auto pano = room / "panorama";
            const std::string id = scene.filename().string() + "/" + room.filename().string();
            if (!fs::exists(pano / "empty" / rgb)) {
                if (log) {
                    log("skipping " + id + ": missing empty-room rendering");
                }
                continue;
            }
            if (!fs::exists(pano / "full" / rgb) || !fs::exists(pano / "full" / "semantic.png")) {
                if (log) {
                    log("skipping " + id + ": missing full-room rendering or semantics");
                }
                continue;
            }
            entries_.push_back({id, pano.string()});
        }
    }
    if (entries_.size() != spec.expected_pairs && log) {
        log(std::string("split ") + split_name(split) + ": found " +
            std::to_string(entries_.size()) + " pairs, the official split has " +
            std::to_string(spec.expected_pairs) + " (partial local copy?)");
    }
}

std::string Structured3DSplit::id(size_t index) const { return entries_.at(index).id; }

ScenePair Structured3DSplit::get(size_t index) const {
    const auto& e = entries_.at(index);
    const fs::path pano(e.room_dir);
    const std::string rgb = "rgb_" + options_.lighting + "light.png";
    ScenePair pair;
    pair.id = e.id;
    pair.empty = resize_area(read_png_rgb((pano / "empty" / rgb).string()), options_.height,
                             options_.width);
    pair.cluttered = resize_area(read_png_rgb((pano / "full" / rgb).string()), options_.height,
                                 options_.width);
    const auto sem = read_png_rgb8((pano / "full" / "semantic.png").string());
    LabelMap labels(sem.height, sem.width);
    for (size_t i = 0; i < labels.data.size(); ++i) {
        labels.data[i] = palette::decode(sem.data[3 * i], sem.data[3 * i + 1], sem.data[3 * i + 2]);
    }
    pair.semantics = resize_nearest(labels, options_.height, options_.width);
    return pair;
}

std::unique_ptr<SceneSource> open_scene_source(const std::string& root, Split split,
                                               Structured3DOptions options, const LogFn& log) {
    if (fs::exists(fs::path(root) / "index.json")) {
        return std::make_unique<ToyDirCorpus>(root);
    }
    return std::make_unique<Structured3DSplit>(root, split, std::move(options), log);
}

TrainingSample make_training_sample(const ScenePair& pair, const HoleMask& mask) {
    if (pair.empty.dim() != 3 || pair.empty.size(0) != 3 || mask.height != pair.empty.size(1) ||
        mask.width != pair.empty.size(2)) {
        throw PreconditionError("make_training_sample: mask " + std::to_string(mask.width) + "x" +
                                std::to_string(mask.height) + " does not match image " +
                                c10::str(pair.empty.sizes()));
    }
    TrainingSample s;
    s.mask = mask.to_tensor().squeeze(0);
    s.target = pair.empty;
    s.input = torch::cat({pair.empty * (1 - s.mask), s.mask}, 0);
    return s;
}

double clutter_ratio(const LabelMap& semantics) {
    if (semantics.data.empty()) {
        return 0.0;
    }
    const auto n = std::count_if(semantics.data.begin(), semantics.data.end(), labels::is_clutter);
    return static_cast<double>(n) / static_cast<double>(semantics.data.size());
}

ClutterStatistics clutter_statistics(const SceneSource& source) {
    ClutterStatistics stats;
    for (size_t i = 0; i < source.size(); ++i) {
        const double r = clutter_ratio(source.get(i).semantics);
        stats.ratios.push_back(r);
        const auto bin = std::min<size_t>(19, static_cast<size_t>(std::floor(r / 0.05 + 1e-12)));
        ++stats.histogram[bin];
    }
    if (stats.ratios.empty()) {
        return stats;
    }
    double sum = 0.0;
    for (double r : stats.ratios) {
        sum += r;
    }
    stats.mean = sum / static_cast<double>(stats.ratios.size());
    auto sorted = stats.ratios;
    std::sort(sorted.begin(), sorted.end());
    const double pos = 0.75 * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<size_t>(std::floor(pos));
    const size_t hi = std::min(lo + 1, sorted.size() - 1);
    stats.p75 = sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
    return stats;
}

}  // namespace wfm
