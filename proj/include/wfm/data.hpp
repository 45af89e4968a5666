#pragma once

// Paired empty/cluttered panoramas with semantics: the Structured3D loader,
// the procedural toy-room renderer and on-disk toy corpora.

#include "wfm/mask_policy.hpp"

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace wfm {

using LogFn = std::function<void(const std::string&)>;

struct ScenePair {
    std::string id;
    torch::Tensor empty;      ///< 3 x H x W float32 in [0, 1]
    torch::Tensor cluttered;  ///< 3 x H x W float32 in [0, 1]
    LabelMap semantics;       ///< labels of the cluttered render
};

/// Random-access collection of scene pairs with a stable ordering.
class SceneSource {
public:
    virtual ~SceneSource() = default;
    virtual size_t size() const = 0;
    virtual std::string id(size_t index) const = 0;
    virtual ScenePair get(size_t index) const = 0;
};

/// Renders an equirectangular view from inside a random cuboid room: floor
/// grid, striped walls, plain ceiling. `cluttered` adds 1-5 boxes resting on
/// the floor; structural pixels are identical in both renders. Requires
/// height >= 32 and width == 2 * height.
ScenePair toy_scene(Rng& rng, int64_t height, int64_t width);

/// Pair i is rendered from an Rng seeded with (seed, i), so any subset can be
/// regenerated independently.
class ToyCorpus : public SceneSource {
public:
    ToyCorpus(size_t count, int64_t height, int64_t width, uint64_t seed);

    size_t size() const override { return scenes_.size(); }
    std::string id(size_t index) const override;
    ScenePair get(size_t index) const override;

private:
    std::vector<ScenePair> scenes_;
};

/// Writes `count` toy pairs as <id>_empty.png, <id>_full.png, <id>_sem.png
/// (8-bit label ids) plus index.json.
void write_toy_corpus(const std::string& dir, size_t count, int64_t height, int64_t width,
                      uint64_t seed);

/// Reads a directory produced by write_toy_corpus.
class ToyDirCorpus : public SceneSource {
public:
    explicit ToyDirCorpus(const std::string& dir);

    size_t size() const override { return entries_.size(); }
    std::string id(size_t index) const override;
    ScenePair get(size_t index) const override;

private:
    struct Entry {
        std::string id, empty, cluttered, semantics;
    };
    std::string dir_;
    std::vector<Entry> entries_;
};

enum class Split { Train, Val, Test };
const char* split_name(Split split);
Split parse_split(const std::string& name);

struct SplitSpec {
    Split split;
    int first_scene;     ///< scene index range [first_scene, last_scene]
    int last_scene;
    size_t expected_pairs;
};
SplitSpec split_spec(Split split);

/// Semantic palette colours of the structural classes; any other non-black
/// colour decodes to a generic clutter label.
namespace palette {
inline constexpr std::array<uint8_t, 3> kWall{174, 199, 232};
inline constexpr std::array<uint8_t, 3> kFloor{152, 223, 138};
inline constexpr std::array<uint8_t, 3> kCeiling{78, 71, 183};
inline constexpr int32_t kGenericClutter = 40;
int32_t decode(uint8_t r, uint8_t g, uint8_t b);
}  // namespace palette

struct Structured3DOptions {
    std::string lighting = "raw";  ///< raw, cold or warm
    int64_t height = 256;
    int64_t width = 512;
};

/// Lazily loads one official split. Pairs are
/// scene_XXXXX/2D_rendering/<room>/panorama/{empty,full}/rgb_<lighting>light.png
/// with labels from full/semantic.png, ordered by scene then room id. Images
/// are area-resized and labels nearest-resized to the configured size.
class Structured3DSplit : public SceneSource {
public:
    Structured3DSplit(const std::string& root, Split split, Structured3DOptions options = {},
                      const LogFn& log = nullptr);

    size_t size() const override { return entries_.size(); }
    std::string id(size_t index) const override;
    ScenePair get(size_t index) const override;

private:
    struct Entry {
        std::string id, room_dir;
    };
    Structured3DOptions options_;
    std::vector<Entry> entries_;
};

/// Picks a corpus reader for `root`: a toy directory when index.json is
/// present, otherwise a Structured3D split.
std::unique_ptr<SceneSource> open_scene_source(const std::string& root, Split split,
                                               Structured3DOptions options = {},
                                               const LogFn& log = nullptr);

struct TrainingSample {
    torch::Tensor input;   ///< 4 x H x W: empty * (1 - m), m
    torch::Tensor target;  ///< 3 x H x W: the empty render
    torch::Tensor mask;    ///< 1 x H x W, 1 = hole
};

/// Masks the empty render. The cluttered render is never read.
TrainingSample make_training_sample(const ScenePair& pair, const HoleMask& mask);

struct ClutterStatistics {
    std::vector<double> ratios;           ///< per scene, source order
    std::array<int64_t, 20> histogram{};  ///< 5% bins, ratio 1.0 lands in the last bin
    double mean = 0.0;
    double p75 = 0.0;                     ///< linear interpolation between order statistics
};

double clutter_ratio(const LabelMap& semantics);
ClutterStatistics clutter_statistics(const SceneSource& source);

}  // namespace wfm
