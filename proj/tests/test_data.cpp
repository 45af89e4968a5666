#include "wfm/data.hpp"
#include "wfm/error.hpp"
#include "wfm/image_io.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

using namespace wfm;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("wfm_test_data_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

bool structural(int32_t label) { return !labels::is_clutter(label); }

// Writes one fake Structured3D room. Semantics: top third ceiling, middle
// wall with a clutter block, bottom third floor.
void write_room(const fs::path& root, int scene, int room, bool with_empty,
                const std::string& lighting = "raw") {
    char scene_name[32];
    std::snprintf(scene_name, sizeof scene_name, "scene_%05d", scene);
    const auto pano = root / scene_name / "2D_rendering" / std::to_string(room) / "panorama";
    fs::create_directories(pano / "full");
    const int64_t h = 16, w = 32;
    auto full = torch::full({3, h, w}, (scene % 7) / 10.0 + 0.1);
    write_png_rgb((pano / "full" / ("rgb_" + lighting + "light.png")).string(), full);
    auto sem = torch::empty({3, h, w});
    auto paint = [&](int64_t y0, int64_t y1, int64_t x0, int64_t x1, std::array<uint8_t, 3> c) {
        for (int k = 0; k < 3; ++k) {
            sem[k].slice(0, y0, y1).slice(1, x0, x1).fill_(c[k] / 255.0);
        }
    };
    paint(0, 5, 0, w, palette::kCeiling);
    paint(5, 11, 0, w, palette::kWall);
    paint(11, h, 0, w, palette::kFloor);
    paint(6, 10, 4, 12, {200, 30, 40});
    write_png_rgb((pano / "full" / "semantic.png").string(), sem);
    if (with_empty) {
        fs::create_directories(pano / "empty");
        write_png_rgb((pano / "empty" / ("rgb_" + lighting + "light.png")).string(),
                      torch::full({3, h, w}, 0.5));
    }
}

}  // namespace

TEST(ToyScene, StructuralPixelsIdenticalClutterPixelsDiffer) {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        const auto s = toy_scene(rng, 64, 128);
        ASSERT_EQ(s.empty.sizes(), (std::vector<int64_t>{3, 64, 128}));
        ASSERT_EQ(s.cluttered.sizes(), s.empty.sizes());
        ASSERT_EQ(s.semantics.height, 64);
        auto diff = (s.empty - s.cluttered).abs().amax(0);  // H x W
        int64_t clutter = 0, differing = 0;
        for (int64_t y = 0; y < 64; ++y) {
            for (int64_t x = 0; x < 128; ++x) {
                const bool d = diff[y][x].item<float>() > 0;
                if (structural(s.semantics.at(y, x))) {
                    ASSERT_FALSE(d) << "structural pixel changed at " << y << "," << x;
                } else {
                    ++clutter;
                    differing += d;
                }
            }
        }
        EXPECT_GT(clutter, 0) << "seed " << seed;
        EXPECT_GE(differing, clutter * 99 / 100) << "seed " << seed;
    }
}

TEST(ToyScene, ColumnsScanCeilingWallFloor) {
    // Ignoring clutter, each column reads ceiling, then wall, then floor, each
    // as one contiguous run.
    for (uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed);
        const auto s = toy_scene(rng, 64, 128);
        for (int64_t x = 0; x < 128; ++x) {
            auto rank = [](int32_t l) {
                return l == labels::kCeiling ? 0 : l == labels::kWall ? 1 : 2;
            };
            int last = 0;
            bool saw_floor = false, saw_ceiling = false;
            for (int64_t y = 0; y < 64; ++y) {
                const int32_t l = s.semantics.at(y, x);
                if (!structural(l)) {
                    continue;
                }
                ASSERT_NE(l, labels::kUnlabeled);
                const int r = rank(l);
                ASSERT_GE(r, last) << "seed " << seed << " column " << x << " row " << y;
                last = r;
                saw_floor |= l == labels::kFloor;
                saw_ceiling |= l == labels::kCeiling;
            }
            EXPECT_TRUE(saw_floor);
            EXPECT_TRUE(saw_ceiling);
            // The bottom row looks straight down, the top row straight up.
            EXPECT_EQ(s.semantics.at(63, x), labels::kFloor);
            EXPECT_EQ(s.semantics.at(0, x), labels::kCeiling);
        }
    }
}

TEST(ToyScene, SeedReproducibleAndValidated) {
    Rng a(17), b(17), c(18);
    const auto sa = toy_scene(a, 32, 64);
    const auto sb = toy_scene(b, 32, 64);
    const auto sc = toy_scene(c, 32, 64);
    EXPECT_TRUE(torch::equal(sa.cluttered, sb.cluttered));
    EXPECT_EQ(sa.semantics, sb.semantics);
    EXPECT_FALSE(torch::equal(sa.empty, sc.empty));
    Rng r(0);
    EXPECT_THROW(toy_scene(r, 64, 100), PreconditionError);
    EXPECT_THROW(toy_scene(r, 16, 32), PreconditionError);
    EXPECT_GE(sa.empty.min().item<float>(), 0.0f);
    EXPECT_LE(sa.empty.max().item<float>(), 1.0f);
}

TEST(ToyCorpus, IndependentOfCountAndStable) {
    ToyCorpus small(3, 32, 64, 5), large(8, 32, 64, 5);
    ASSERT_EQ(small.size(), 3u);
    for (size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(small.id(i), large.id(i));
        EXPECT_TRUE(torch::equal(small.get(i).empty, large.get(i).empty));
    }
    EXPECT_EQ(small.id(0), "toy_00000");
}

TEST(TrainingSample, UsesOnlyTheEmptyRender) {
    Rng rng(3);
    const auto pair = toy_scene(rng, 32, 64);
    const auto none = make_training_sample(pair, HoleMask(32, 64, 0));
    EXPECT_TRUE(torch::equal(none.input.slice(0, 0, 3), pair.empty));
    EXPECT_TRUE(torch::equal(none.target, pair.empty));

    Rng mrng(4);
    const auto mask = rectangular_mask(32, 64, {0.2, 0.3}, mrng);
    const auto s = make_training_sample(pair, mask);
    EXPECT_EQ(s.input.sizes(), (std::vector<int64_t>{4, 32, 64}));
    EXPECT_TRUE(torch::equal(s.input.slice(0, 3, 4), mask.to_tensor().squeeze(0)));
    EXPECT_EQ((s.input.slice(0, 0, 3) * s.mask).abs().sum().item<float>(), 0.0f);

    // Data-flow check: replacing the cluttered render changes nothing.
    auto poisoned = pair;
    poisoned.cluttered = torch::full_like(pair.cluttered, 0.123f);
    const auto p = make_training_sample(poisoned, mask);
    EXPECT_TRUE(torch::equal(p.input, s.input));
    EXPECT_TRUE(torch::equal(p.target, s.target));
    EXPECT_THROW(make_training_sample(pair, HoleMask(16, 64)), PreconditionError);
}

TEST(ClutterStatistics, HistogramAndPercentile) {
    ToyCorpus corpus(100, 32, 64, 11);
    const auto st = clutter_statistics(corpus);
    int64_t total = 0;
    for (auto n : st.histogram) total += n;
    EXPECT_EQ(total, 100);
    ASSERT_EQ(st.ratios.size(), 100u);
    double sum = 0;
    for (double r : st.ratios) sum += r;
    EXPECT_NEAR(st.mean, sum / 100, 1e-12);
    auto sorted = st.ratios;
    std::sort(sorted.begin(), sorted.end());
    // Linear interpolation at rank 0.75 * 99 = 74.25.
    EXPECT_NEAR(st.p75, sorted[74] + 0.25 * (sorted[75] - sorted[74]), 1e-12);
    EXPECT_EQ(clutter_ratio(LabelMap(8, 16, labels::kWall)), 0.0);
}

TEST(ToyDirCorpus, RoundTripsThroughDisk) {
    const auto dir = fresh_dir("toy");
    write_toy_corpus(dir.string(), 3, 32, 64, 21);
    ToyDirCorpus disk(dir.string());
    ToyCorpus mem(3, 32, 64, 21);
    ASSERT_EQ(disk.size(), 3u);
    for (size_t i = 0; i < 3; ++i) {
        const auto a = disk.get(i), b = mem.get(i);
        EXPECT_EQ(a.id, b.id);
        EXPECT_TRUE(torch::equal(a.empty, b.empty));
        EXPECT_TRUE(torch::equal(a.cluttered, b.cluttered));
        EXPECT_EQ(a.semantics, b.semantics);
    }
    EXPECT_NE(dynamic_cast<ToyDirCorpus*>(open_scene_source(dir.string(), Split::Test).get()),
              nullptr);
    fs::remove_all(dir);
}

TEST(SplitSpec, OfficialCounts) {
    EXPECT_EQ(split_spec(Split::Train).expected_pairs, 18362u);
    EXPECT_EQ(split_spec(Split::Val).expected_pairs, 1776u);
    EXPECT_EQ(split_spec(Split::Test).expected_pairs, 1697u);
    EXPECT_EQ(parse_split("val"), Split::Val);
    EXPECT_THROW(parse_split("dev"), Error);
}

TEST(Palette, DecodesStructureAndClutter) {
    EXPECT_EQ(palette::decode(174, 199, 232), labels::kWall);
    EXPECT_EQ(palette::decode(152, 223, 138), labels::kFloor);
    EXPECT_EQ(palette::decode(78, 71, 183), labels::kCeiling);
    EXPECT_EQ(palette::decode(0, 0, 0), labels::kUnlabeled);
    EXPECT_TRUE(labels::is_clutter(palette::decode(200, 30, 40)));
}

TEST(Structured3D, ScansSkipsAndOrders) {
    const auto root = fresh_dir("s3d");
    const auto base = root / "Structured3D";
    write_room(base, 3251, 10, true);
    write_room(base, 3251, 2, true);
    write_room(base, 3250, 7, false);  // no empty render: skipped
    write_room(base, 3260, 1, true);
    write_room(base, 12, 1, true);     // train split: ignored for test
    std::vector<std::string> log;
    Structured3DSplit split(root.string(), Split::Test, Structured3DOptions{"raw", 8, 16},
                            [&](const std::string& m) { log.push_back(m); });
    ASSERT_EQ(split.size(), 3u);
    EXPECT_EQ(split.id(0), "scene_03251/2");
    EXPECT_EQ(split.id(1), "scene_03251/10");
    EXPECT_EQ(split.id(2), "scene_03260/1");
    bool skipped = false, count_warning = false;
    for (const auto& m : log) {
        skipped |= m.find("scene_03250/7") != std::string::npos;
        count_warning |= m.find("1697") != std::string::npos;
    }
    EXPECT_TRUE(skipped);
    EXPECT_TRUE(count_warning);

    const auto pair = split.get(0);
    EXPECT_EQ(pair.empty.sizes(), (std::vector<int64_t>{3, 8, 16}));
    EXPECT_EQ(pair.semantics.height, 8);
    EXPECT_EQ(pair.semantics.at(0, 0), labels::kCeiling);
    EXPECT_EQ(pair.semantics.at(7, 0), labels::kFloor);
    EXPECT_TRUE(labels::is_clutter(pair.semantics.at(4, 3)));
    EXPECT_NEAR(pair.empty.mean().item<float>(), 128 / 255.0, 1e-6);

    Structured3DSplit again(root.string(), Split::Test, Structured3DOptions{"raw", 8, 16});
    for (size_t i = 0; i < split.size(); ++i) {
        EXPECT_EQ(split.id(i), again.id(i));
    }
    Structured3DSplit cold(root.string(), Split::Test, Structured3DOptions{"cold", 8, 16});
    EXPECT_EQ(cold.size(), 0u);
    fs::remove_all(root);
}

TEST(Structured3D, EmptyAndMissingRoots) {
    const auto root = fresh_dir("empty");
    std::vector<std::string> log;
    Structured3DSplit split(root.string(), Split::Test, {},
                            [&](const std::string& m) { log.push_back(m); });
    EXPECT_EQ(split.size(), 0u);
    EXPECT_FALSE(log.empty());
    EXPECT_THROW(Structured3DSplit((root / "missing").string(), Split::Test), IoError);
    EXPECT_THROW(Structured3DSplit(root.string(), Split::Test, Structured3DOptions{"dim"}),
                 ConfigError);
    fs::remove_all(root);
}

TEST(Structured3D, FullDatasetStatisticsWhenAvailable) {
    const char* env = std::getenv("WFM_DATA_ROOT");
    if (!env || !fs::exists(env) || fs::exists(fs::path(env) / "index.json")) {
        GTEST_SKIP() << "WFM_DATA_ROOT does not point at a Structured3D copy";
    }
    Structured3DSplit test(env, Split::Test);
    if (test.size() != 1697) {
        GTEST_SKIP() << "partial Structured3D copy (" << test.size() << " test pairs)";
    }
    Structured3DSplit train(env, Split::Train, Structured3DOptions{"raw", 256, 512});
    const auto st = clutter_statistics(train);
    EXPECT_NEAR(st.mean, 0.21, 0.02);
    EXPECT_NEAR(st.p75, 0.31, 0.02);
}
