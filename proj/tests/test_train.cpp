#include "wfm/error.hpp"
#include "wfm/train.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

using namespace wfm;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("wfm_test_train_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// Smallest configuration the generator contract allows.
TrainConfig tiny(const std::string& out, const std::string& extra = "") {
    return parse_train_config("height = 32\nwidth = 64\nbatch = 2\nepochs = 1\n"
                              "channels = 8\nblocks = 1\ndisc_channels = 8\ndisc_layers = 3\n"
                              "perceptual = desk\ndata = toy\ntoy_scenes = 6\nval_scenes = 2\n"
                              "seed = 3\nlog_every = 1000\noutput_dir = " +
                              out + "\n" + extra);
}

std::string bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<torch::Tensor> snapshot(const torch::nn::Module& m) {
    std::vector<torch::Tensor> out;
    for (const auto& p : m.parameters()) {
        out.push_back(p.detach().clone());
    }
    return out;
}

bool same(const std::vector<torch::Tensor>& a, const torch::nn::Module& m) {
    const auto b = m.parameters();
    for (size_t i = 0; i < a.size(); ++i) {
        if (!torch::equal(a[i], b[i])) {
            return false;
        }
    }
    return true;
}

bool same_scalars(const StepScalars& a, const StepScalars& b) {
    const auto na = a.named(), nb = b.named();
    for (size_t i = 0; i < na.size(); ++i) {
        if (na[i].second != nb[i].second) {
            return false;
        }
    }
    return true;
}

}  // namespace

TEST(TrainConfig, DefaultsFollowTheTrainingRecipe) {
    const TrainConfig c;
    EXPECT_EQ(c.width, 512);
    EXPECT_EQ(c.height, 256);
    EXPECT_EQ(c.epochs, 40);
    EXPECT_EQ(c.batch, 6);
    EXPECT_DOUBLE_EQ(c.lr_g, 1e-3);
    EXPECT_DOUBLE_EQ(c.lr_d, 1e-4);
    EXPECT_EQ(c.generator.channels, 64);
    EXPECT_EQ(c.loss.rec, 10.0);
    EXPECT_EQ(c.loss.perc, 100.0);
    EXPECT_EQ(c.loss.adv, 10.0);
    EXPECT_EQ(c.loss.gp, 0.001);
    EXPECT_EQ(c.loss.fm, 30.0);
    EXPECT_NO_THROW(c.validate());
}

TEST(TrainConfig, FormatParseRoundTrip) {
    auto c = tiny("/tmp/x", "mixer = ffc\nloss.fm = 12.5\nblocks = 1,2,1,2\nlr_g = 0.0003\n");
    EXPECT_EQ(c.generator.mixer, MixerVariant::FFC);
    EXPECT_EQ(c.loss.fm, 12.5);
    EXPECT_EQ(c.generator.blocks, (std::array<int64_t, 4>{1, 2, 1, 2}));
    const auto text = format_train_config(c);
    EXPECT_EQ(format_train_config(parse_train_config(text)), text);
    EXPECT_EQ(parse_train_config(text).lr_g, 0.0003);
    EXPECT_EQ(format_train_config(parse_train_config(format_train_config({}))),
              format_train_config({}));
}

TEST(TrainConfig, RejectsUnknownKeysAndBadValues) {
    try {
        parse_train_config("height = 64\n# comment\nheigth = 64\n");
        FAIL();
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
        EXPECT_NE(msg.find("heigth"), std::string::npos) << msg;
    }
    EXPECT_THROW(parse_train_config("batch = many\n"), ConfigError);
    EXPECT_THROW(parse_train_config("just words\n"), ConfigError);
    EXPECT_THROW(parse_train_config("height = 100\n").validate(), PreconditionError);
    EXPECT_THROW(tiny("/tmp/x", "lr_g = -1\n").validate(), ConfigError);
    EXPECT_THROW(load_train_config("/nonexistent/config.cfg"), IoError);
}

TEST(Presets, CoverAllAblationsAndDifferOnOneAxis) {
    EXPECT_EQ(preset_names(), (std::vector<std::string>{"wfm", "fm_no_window", "ffc", "gated_only",
                                                        "wfm_2d", "lrfpl"}));
    auto differing = [](const TrainConfig& a, const TrainConfig& b) {
        std::istringstream sa(format_train_config(a)), sb(format_train_config(b));
        std::vector<std::string> diff;
        for (std::string la, lb; std::getline(sa, la) && std::getline(sb, lb);) {
            if (la != lb) {
                diff.push_back(la.substr(0, la.find(' ')));
            }
        }
        return diff;
    };
    const auto wfm = ablation_preset("wfm");
    EXPECT_EQ(differing(wfm, ablation_preset("fm_no_window")), std::vector<std::string>{"mixer"});
    EXPECT_EQ(differing(wfm, ablation_preset("lrfpl")), std::vector<std::string>{"perceptual"});
    EXPECT_EQ(ablation_preset("ffc").generator.mixer, MixerVariant::FFC);
    EXPECT_EQ(ablation_preset("gated_only").generator.mixer, MixerVariant::GatedOnly);
    EXPECT_EQ(ablation_preset("wfm_2d").generator.mixer, MixerVariant::WFM2D);
    EXPECT_THROW(ablation_preset("transformer"), ConfigError);
    // Applying a preset keeps everything else of a custom config.
    auto custom = apply_preset(tiny("/tmp/x"), "ffc");
    EXPECT_EQ(custom.height, 32);
}

TEST(Trainer, ZeroLearningRatesLeaveWeightsUnchanged) {
    Trainer t(tiny(fresh_dir("zero").string(), "lr_g = 0\nlr_d = 0\n"));
    const auto g = snapshot(*t.generator()), d = snapshot(*t.discriminator());
    const auto s = t.train_step(t.make_batch(t.train_source(), {0, 1}));
    EXPECT_TRUE(same(g, *t.generator()));
    EXPECT_TRUE(same(d, *t.discriminator()));
    EXPECT_TRUE(std::isfinite(s.g_total));
}

TEST(Trainer, EachUpdateTouchesOnlyItsNetwork) {
    {
        Trainer t(tiny(fresh_dir("donly").string(), "lr_g = 0\n"));
        const auto g = snapshot(*t.generator()), d = snapshot(*t.discriminator());
        t.train_step(t.make_batch(t.train_source(), {0, 1}));
        EXPECT_TRUE(same(g, *t.generator()));
        EXPECT_FALSE(same(d, *t.discriminator()));
    }
    {
        Trainer t(tiny(fresh_dir("gonly").string(), "lr_d = 0\n"));
        const auto g = snapshot(*t.generator()), d = snapshot(*t.discriminator());
        t.train_step(t.make_batch(t.train_source(), {0, 1}));
        EXPECT_FALSE(same(g, *t.generator()));
        EXPECT_TRUE(same(d, *t.discriminator()));
        for (const auto& p : t.discriminator()->parameters()) {
            EXPECT_TRUE(p.requires_grad());
        }
    }
}

TEST(Trainer, LogsExactlySevenScalars) {
    Trainer t(tiny(fresh_dir("scalars").string()));
    const auto s = t.train_step(t.make_batch(t.train_source(), {2, 3}));
    std::vector<std::string> names;
    for (const auto& [n, v] : s.named()) {
        names.push_back(n);
        EXPECT_TRUE(std::isfinite(v)) << n;
    }
    EXPECT_EQ(names, (std::vector<std::string>{"rec", "perc", "adv", "fm", "g_total", "d", "gp"}));
    EXPECT_NEAR(s.g_total, 10 * s.rec + 100 * s.perc + 10 * s.adv + 30 * s.fm,
                1e-5 * std::abs(s.g_total));
    EXPECT_EQ(t.step(), 1);
    EXPECT_EQ(t.history().size(), 1u);
}

TEST(Trainer, TrainingBatchesComeFromEmptyRenders) {
    Trainer t(tiny(fresh_dir("batch").string()));
    const auto b = t.make_batch(t.train_source(), {4, 1});
    EXPECT_EQ(b.images.sizes(), (std::vector<int64_t>{2, 3, 32, 64}));
    EXPECT_EQ(b.masks.sizes(), (std::vector<int64_t>{2, 1, 32, 64}));
    EXPECT_EQ(b.ids, (std::vector<std::string>{"toy_00004", "toy_00001"}));
    EXPECT_TRUE(torch::equal(b.images[0], t.train_source().get(4).empty));
    EXPECT_TRUE(((b.masks == 0) | (b.masks == 1)).all().item<bool>());
}

TEST(Trainer, NonFiniteBatchAbortsWithDump) {
    const auto dir = fresh_dir("nan");
    Trainer t(tiny(dir.string()));
    auto b = t.make_batch(t.train_source(), {0, 1});
    b.images[0][0][0][0] = std::numeric_limits<float>::quiet_NaN();
    b.masks.zero_();
    try {
        t.train_step(b);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("toy_00000"), std::string::npos) << e.what();
    }
    EXPECT_TRUE(fs::exists(dir / "nonfinite_step1.bin"));
    const auto dump = read_checkpoint((dir / "nonfinite_step1.bin").string());
    EXPECT_EQ(dump.meta.at("seed"), "3");
    for (const auto& p : t.discriminator()->parameters()) {
        EXPECT_TRUE(p.requires_grad());
    }
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
    const auto dir = fresh_dir("ckpt");
    Trainer t(tiny(dir.string()));
    t.train_step(t.make_batch(t.train_source(), {0, 1}));
    t.train_step(t.make_batch(t.train_source(), {2, 3}));
    t.save((dir / "a.ckpt").string());
    Trainer::load((dir / "a.ckpt").string())->save((dir / "b.ckpt").string());
    const auto a = bytes(dir / "a.ckpt");
    EXPECT_GT(a.size(), 1000u);
    EXPECT_EQ(a, bytes(dir / "b.ckpt"));
    EXPECT_EQ(a.substr(0, 8), "WFMCKPT1");
}

TEST(Checkpoint, RejectsCorruptFiles) {
    const auto dir = fresh_dir("corrupt");
    std::ofstream(dir / "bad.ckpt") << "NOTACKPTxxxxxxxxxxxxxxxx";
    EXPECT_THROW(read_checkpoint((dir / "bad.ckpt").string()), IoError);
    EXPECT_THROW(read_checkpoint((dir / "missing.ckpt").string()), IoError);
    Trainer t(tiny(dir.string()));
    t.save((dir / "ok.ckpt").string());
    auto text = bytes(dir / "ok.ckpt");
    std::ofstream(dir / "short.ckpt", std::ios::binary) << text.substr(0, text.size() - 10);
    EXPECT_THROW(read_checkpoint((dir / "short.ckpt").string()), IoError);
}

TEST(Checkpoint, TensorKindsRoundTrip) {
    const auto dir = fresh_dir("kinds");
    CheckpointData d;
    d.meta["k"] = "v";
    d.tensors.push_back({"f", torch::rand({2, 3})});
    d.tensors.push_back({"d", torch::rand({4}, torch::kFloat64)});
    d.tensors.push_back({"i", torch::arange(5)});
    d.tensors.push_back({"s", torch::tensor(7.0)});
    write_checkpoint((dir / "k.bin").string(), d);
    const auto back = read_checkpoint((dir / "k.bin").string());
    EXPECT_EQ(back.meta.at("k"), "v");
    ASSERT_EQ(back.tensors.size(), 4u);
    for (size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(back.tensors[i].first, d.tensors[i].first);
        EXPECT_TRUE(torch::equal(back.tensors[i].second, d.tensors[i].second));
    }
}

TEST(Fit, FirstTenStepsAreReproducible) {
    auto run = [](const std::string& name) {
        Trainer t(tiny(fresh_dir(name).string(), "max_steps = 10\nepochs = 10\n"));
        t.fit();
        return t.history();
    };
    const auto a = run("det_a"), b = run("det_b");
    ASSERT_EQ(a.size(), 10u);
    ASSERT_EQ(b.size(), 10u);
    for (size_t i = 0; i < 10; ++i) {
        EXPECT_TRUE(same_scalars(a[i], b[i])) << "step " << i + 1;
    }
}

TEST(Fit, ResumeMatchesUninterruptedRun) {
    const auto dir = fresh_dir("resume");
    Trainer full(tiny((dir / "full").string(), "max_steps = 7\nepochs = 5\n"));
    full.fit();

    Trainer first(tiny((dir / "part").string(), "max_steps = 4\nepochs = 5\n"));
    first.fit();
    ASSERT_TRUE(fs::exists(dir / "part" / "step_4.ckpt"));
    auto resumed = Trainer::load((dir / "part" / "step_4.ckpt").string());
    EXPECT_EQ(resumed->step(), 4);
    resumed->extend_run(5, 7);
    resumed->fit();
    EXPECT_EQ(resumed->step(), 7);
    ASSERT_EQ(resumed->history().size(), full.history().size());
    for (size_t i = 0; i < full.history().size(); ++i) {
        EXPECT_TRUE(same_scalars(resumed->history()[i], full.history()[i])) << "step " << i + 1;
    }
    for (size_t i = 0; i < full.generator()->parameters().size(); ++i) {
        EXPECT_TRUE(torch::equal(full.generator()->parameters()[i],
                                 resumed->generator()->parameters()[i]));
    }
}

TEST(Fit, DeskRunOfTwoEpochsValidatesAndCheckpoints) {
    const auto dir = fresh_dir("desk");
    auto cfg = tiny(dir.string(), "epochs = 2\nbatch = 4\ntoy_scenes = 8\n");
    std::vector<std::string> log;
    const auto start = std::chrono::steady_clock::now();
    Trainer t(cfg, [&](const std::string& m) { log.push_back(m); });
    const auto epochs = t.fit();
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    EXPECT_LT(seconds, 600.0);
    ASSERT_EQ(epochs.size(), 2u);
    for (const auto& e : epochs) {
        EXPECT_EQ(e.validation.cells.size(), 4u);
        EXPECT_GT(e.mean_g_total, 0.0);
    }
    EXPECT_EQ(t.step(), 4);
    EXPECT_TRUE(fs::exists(dir / "epoch_001.ckpt"));
    EXPECT_TRUE(fs::exists(dir / "epoch_002.ckpt"));
    EXPECT_TRUE(fs::exists(dir / "latest.ckpt"));
    int val_lines = 0;
    for (const auto& m : log) val_lines += m.rfind("val epoch", 0) == 0;
    EXPECT_EQ(val_lines, 8);

    // A checkpoint's generator scores exactly like the live one.
    auto loaded = load_generator((dir / "latest.ckpt").string());
    ToyCorpus val(2, 32, 64, 99);
    auto live = evaluate([&](const torch::Tensor& x, const torch::Tensor& m) { return t.inpaint(x, m); },
                         val, EvalGrid::full());
    auto disk = evaluate(
        [&](const torch::Tensor& x, const torch::Tensor& m) {
            torch::NoGradGuard ng;
            return loaded.generator->generate(x, m);
        },
        val, EvalGrid::full());
    EXPECT_EQ(report_to_json(live), report_to_json(disk));
}

TEST(Trainer, OverfitsASingleRepeatedBatch) {
    // C = 16 at 64 x 128 with batch 2, one fixed batch for 200 steps.
    auto cfg = parse_train_config(
        "height = 64\nwidth = 128\nbatch = 2\nchannels = 16\nblocks = 1\nperceptual = desk\n"
        "data = toy\ntoy_scenes = 2\nval_scenes = 1\nseed = 1\ndisc_channels = 16\n"
        "disc_layers = 3\noutput_dir = " +
        fresh_dir("overfit").string() + "\n");
    Trainer t(cfg);
    const auto batch = t.make_batch(t.train_source(), {0, 1});
    std::vector<double> totals;
    for (int i = 0; i < 200; ++i) {
        totals.push_back(t.train_step(batch).g_total);
    }
    const double baseline = totals[4];
    const double final = totals.back();
    std::cout << "overfit g_total: step 5 " << baseline << ", step 200 " << final << "\n";
    EXPECT_LE(final * 5, baseline);
}
