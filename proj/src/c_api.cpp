#include "wfm/wfm.h"

#include "wfm/error.hpp"
#include "wfm/image_io.hpp"
#include "wfm/train.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

struct wfm_trainer {
    std::unique_ptr<wfm::Trainer> trainer;
};

struct wfm_model {
    wfm::LoadedGenerator loaded;
};

struct wfm_report {
    wfm::MetricsReport report;
};

namespace {

thread_local std::string g_last_error;

template <typename F>
wfm_status guarded(F&& f) {
    try {
        f();
        g_last_error.clear();
        return WFM_OK;
    } catch (const wfm::ConfigError& e) {
        g_last_error = e.what();
        return WFM_ERR_CONFIG;
    } catch (const wfm::IoError& e) {
        g_last_error = e.what();
        return WFM_ERR_IO;
    } catch (const wfm::NumericError& e) {
        g_last_error = e.what();
        return WFM_ERR_NUMERIC;
    } catch (const wfm::PreconditionError& e) {
        g_last_error = e.what();
        return WFM_ERR_INVALID_ARGUMENT;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return WFM_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return WFM_ERR_INTERNAL;
    }
}

void require(const void* p, const char* what) {
    if (p == nullptr) {
        throw wfm::PreconditionError(std::string(what) + " must not be NULL");
    }
}

wfm::LogFn bind_log(wfm_log_fn log, void* user) {
    if (!log) {
        return nullptr;
    }
    return [log, user](const std::string& m) { log(m.c_str(), user); };
}

char* dup_string(const std::string& s) {
    auto* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (!out) {
        throw std::bad_alloc();
    }
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

}  // namespace

extern "C" {

const char* wfm_last_error(void) { return g_last_error.c_str(); }

const char* wfm_version(void) { return "0.1.0"; }

void wfm_string_free(char* s) { std::free(s); }

wfm_status wfm_trainer_create(const char* config_path, const char* preset,
                              const char* resume_checkpoint, wfm_log_fn log, void* user,
                              wfm_trainer** out) {
    return guarded([&] {
        require(out, "out");
        *out = nullptr;
        auto handle = std::make_unique<wfm_trainer>();
        if (resume_checkpoint && *resume_checkpoint) {
            handle->trainer = wfm::Trainer::load(resume_checkpoint, bind_log(log, user));
            if (config_path && *config_path) {
                const auto limits = wfm::load_train_config(config_path);
                handle->trainer->extend_run(limits.epochs, limits.max_steps);
            }
        } else {
            require(config_path, "config_path");
            auto config = wfm::load_train_config(config_path);
            if (preset && *preset) {
                config = wfm::apply_preset(config, preset);
            }
            handle->trainer = std::make_unique<wfm::Trainer>(config, bind_log(log, user));
        }
        *out = handle.release();
    });
}

wfm_status wfm_trainer_fit(wfm_trainer* trainer) {
    return guarded([&] {
        require(trainer, "trainer");
        trainer->trainer->fit();
    });
}

wfm_status wfm_trainer_save(const wfm_trainer* trainer, const char* path) {
    return guarded([&] {
        require(trainer, "trainer");
        require(path, "path");
        trainer->trainer->save(path);
    });
}

wfm_status wfm_trainer_step_count(const wfm_trainer* trainer, int64_t* out) {
    return guarded([&] {
        require(trainer, "trainer");
        require(out, "out");
        *out = trainer->trainer->step();
    });
}

void wfm_trainer_destroy(wfm_trainer* trainer) { delete trainer; }

wfm_status wfm_model_load(const char* checkpoint_path, wfm_model** out) {
    return guarded([&] {
        require(checkpoint_path, "checkpoint_path");
        require(out, "out");
        *out = nullptr;
        auto handle = std::make_unique<wfm_model>();
        handle->loaded = wfm::load_generator(checkpoint_path);
        *out = handle.release();
    });
}

wfm_status wfm_model_parameter_count(const wfm_model* model, int64_t* out) {
    return guarded([&] {
        require(model, "model");
        require(out, "out");
        *out = wfm::module_parameter_count(*model->loaded.generator);
    });
}

wfm_status wfm_model_inpaint_file(wfm_model* model, const char* image_png, const char* mask_png,
                                  const char* out_png) {
    return guarded([&] {
        require(model, "model");
        require(image_png, "image_png");
        require(mask_png, "mask_png");
        require(out_png, "out_png");
        const auto image = wfm::read_png_rgb(image_png).unsqueeze(0);
        const auto gray = wfm::read_png_gray(mask_png);
        if (gray.height != image.size(2) || gray.width != image.size(3)) {
            throw wfm::PreconditionError("mask is " + std::to_string(gray.width) + "x" +
                                         std::to_string(gray.height) + " but image is " +
                                         std::to_string(image.size(3)) + "x" +
                                         std::to_string(image.size(2)));
        }
        auto mask = torch::empty({1, 1, gray.height, gray.width}, torch::kFloat32);
        auto* m = mask.data_ptr<float>();
        for (size_t i = 0; i < gray.data.size(); ++i) {
            m[i] = gray.data[i] >= 128 ? 1.0f : 0.0f;
        }
        torch::NoGradGuard no_grad;
        const auto out = model->loaded.generator->generate(image, mask);
        wfm::write_png_rgb(out_png, wfm::composite(image, out, mask).squeeze(0));
    });
}

wfm_status wfm_model_evaluate(wfm_model* model, const char* data_root, int composite,
                              wfm_log_fn log, void* user, wfm_report** out) {
    return guarded([&] {
        require(model, "model");
        require(out, "out");
        *out = nullptr;
        std::string root = data_root ? data_root : "";
        if (root.empty()) {
            const char* env = std::getenv("WFM_DATA_ROOT");
            root = env ? env : "";
        }
        if (root.empty()) {
            throw wfm::PreconditionError("no dataset root given and WFM_DATA_ROOT is unset");
        }
        const auto& cfg = model->loaded.config;
        const auto logger = bind_log(log, user);
        auto source = wfm::open_scene_source(
            root, wfm::Split::Test, wfm::Structured3DOptions{cfg.lighting, cfg.height, cfg.width},
            logger);
        auto& gen = model->loaded.generator;
        wfm::EvalOptions options;
        options.seed = 0;
        options.composite = composite != 0;
        auto handle = std::make_unique<wfm_report>();
        handle->report = wfm::evaluate(
            [&gen](const torch::Tensor& x, const torch::Tensor& m) { return gen->generate(x, m); },
            *source, wfm::EvalGrid::full(), options);
        *out = handle.release();
    });
}

void wfm_model_destroy(wfm_model* model) { delete model; }

wfm_status wfm_report_load(const char* json_path, wfm_report** out) {
    return guarded([&] {
        require(json_path, "json_path");
        require(out, "out");
        *out = nullptr;
        std::ifstream in(json_path);
        if (!in) {
            throw wfm::IoError(std::string("cannot open '") + json_path + "'");
        }
        std::stringstream ss;
        ss << in.rdbuf();
        auto handle = std::make_unique<wfm_report>();
        handle->report = wfm::report_from_json(ss.str());
        *out = handle.release();
    });
}

wfm_status wfm_report_save(const wfm_report* report, const char* json_path) {
    return guarded([&] {
        require(report, "report");
        require(json_path, "json_path");
        std::ofstream out(json_path);
        out << wfm::report_to_json(report->report);
        if (!out) {
            throw wfm::IoError(std::string("cannot write '") + json_path + "'");
        }
    });
}

wfm_status wfm_report_format(const wfm_report* report, const char* format, char** out) {
    return guarded([&] {
        require(report, "report");
        require(format, "format");
        require(out, "out");
        const std::string f = format;
        std::string text;
        if (f == "csv") {
            text = wfm::report_to_csv(report->report);
        } else if (f == "md") {
            text = wfm::report_to_markdown(report->report);
        } else if (f == "json") {
            text = wfm::report_to_json(report->report);
        } else {
            throw wfm::PreconditionError("unknown report format '" + f + "' (csv, md or json)");
        }
        *out = dup_string(text);
    });
}

void wfm_report_destroy(wfm_report* report) { delete report; }

wfm_status wfm_make_masks(const char* kind, double lo, double hi, int n, int width, int height,
                          uint64_t seed, const char* out_dir) {
    return guarded([&] {
        require(kind, "kind");
        require(out_dir, "out_dir");
        if (n < 1 || width < 1 || height < 1) {
            throw wfm::PreconditionError("n, width and height must be positive");
        }
        const auto k = wfm::parse_mask_kind(kind);
        fs::create_directories(out_dir);
        for (int i = 0; i < n; ++i) {
            const uint64_t s = seed + static_cast<uint64_t>(i);
            wfm::MaskSpec spec{k, {lo, hi}, height, width, s};
            wfm::HoleMask mask;
            if (k == wfm::MaskKind::Segmentation) {
                wfm::Rng rng(s);
                const auto room = wfm::toy_scene(rng, height, width);
                mask = wfm::generate_mask(spec, &room.semantics);
            } else {
                mask = wfm::generate_mask(spec);
            }
            wfm::GrayImage png{mask.height, mask.width, {}};
            png.data.reserve(mask.data.size());
            for (auto v : mask.data) {
                png.data.push_back(v ? 255 : 0);
            }
            const std::string name = std::string(kind) + "_" + spec.interval.label() + "_seed" +
                                     std::to_string(s) + ".png";
            wfm::write_png_gray((fs::path(out_dir) / name).string(), png);
        }
    });
}

wfm_status wfm_make_toy_data(int n, int width, int height, uint64_t seed, const char* out_dir) {
    return guarded([&] {
        require(out_dir, "out_dir");
        if (n < 1) {
            throw wfm::PreconditionError("n must be positive");
        }
        wfm::write_toy_corpus(out_dir, static_cast<size_t>(n), height, width, seed);
    });
}

}  // extern "C"
