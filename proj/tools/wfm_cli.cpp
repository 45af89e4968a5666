// Command-line front end; talks to the library only through wfm.h.

#include "wfm/wfm.h"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>

namespace {

void print_log(const char* message, void*) { std::cerr << message << "\n"; }

int check(wfm_status status) {
    if (status != WFM_OK) {
        std::cerr << "error: " << wfm_last_error() << "\n";
        return static_cast<int>(status);
    }
    return 0;
}

bool parse_size(const std::string& text, int& width, int& height) {
    return std::sscanf(text.c_str(), "%dx%d", &width, &height) == 2 && width > 0 && height > 0;
}

bool parse_interval(const std::string& text, double& lo, double& hi) {
    return std::sscanf(text.c_str(), "%lf,%lf", &lo, &hi) == 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Panorama clutter-removal inpainting"};
    app.require_subcommand(1);

    std::string config, preset, resume;
    auto* train = app.add_subcommand("train", "train a generator/discriminator pair");
    train->add_option("--config", config, "key = value config file");
    train->add_option("--preset", preset, "ablation preset (wfm, fm_no_window, ffc, gated_only, wfm_2d, lrfpl)");
    train->add_option("--resume", resume, "checkpoint to continue from");

    std::string ckpt, data, metrics_out;
    bool composite = false;
    auto* eval = app.add_subcommand("eval", "score a checkpoint on the mask grid");
    eval->add_option("--ckpt", ckpt)->required();
    eval->add_option("--data", data, "toy directory or Structured3D root (default $WFM_DATA_ROOT)");
    eval->add_flag("--composite", composite, "keep known pixels before scoring");
    eval->add_option("--out", metrics_out, "write the report as JSON");

    std::string image, mask, out_png;
    auto* inpaint = app.add_subcommand("inpaint", "fill the holes of one panorama");
    inpaint->add_option("--ckpt", ckpt)->required();
    inpaint->add_option("--image", image)->required();
    inpaint->add_option("--mask", mask, "PNG, 255 = hole")->required();
    inpaint->add_option("--out", out_png)->required();

    std::string kind, interval, size, out_dir;
    int n = 1;
    uint64_t seed = 0;
    auto* masks = app.add_subcommand("make-masks", "write hole masks as PNG (255 = hole)");
    masks->add_option("--kind", kind)->required();
    masks->add_option("--interval", interval, "lo,hi hole ratio")->required();
    masks->add_option("--n", n);
    masks->add_option("--size", size, "WxH")->required();
    masks->add_option("--seed", seed);
    masks->add_option("--out", out_dir)->required();

    auto* toy = app.add_subcommand("toy-data", "render procedural room pairs");
    toy->add_option("--n", n);
    toy->add_option("--size", size, "WxH")->required();
    toy->add_option("--seed", seed);
    toy->add_option("--out", out_dir)->required();

    std::string report_in, format = "md";
    auto* report = app.add_subcommand("report", "format a metrics JSON file");
    report->add_option("--in", report_in)->required();
    report->add_option("--format", format)->check(CLI::IsMember({"csv", "md"}));

    CLI11_PARSE(app, argc, argv);

    if (*train) {
        if (config.empty() && resume.empty()) {
            std::cerr << "error: train needs --config or --resume\n";
            return 1;
        }
        wfm_trainer* t = nullptr;
        if (int rc = check(wfm_trainer_create(config.empty() ? nullptr : config.c_str(),
                                              preset.empty() ? nullptr : preset.c_str(),
                                              resume.empty() ? nullptr : resume.c_str(),
                                              print_log, nullptr, &t))) {
            return rc;
        }
        const int rc = check(wfm_trainer_fit(t));
        wfm_trainer_destroy(t);
        return rc;
    }
    if (*eval) {
        wfm_model* model = nullptr;
        if (int rc = check(wfm_model_load(ckpt.c_str(), &model))) {
            return rc;
        }
        wfm_report* r = nullptr;
        int rc = check(wfm_model_evaluate(model, data.c_str(), composite ? 1 : 0, print_log,
                                          nullptr, &r));
        if (rc == 0) {
            char* text = nullptr;
            rc = check(wfm_report_format(r, "md", &text));
            if (rc == 0) {
                std::cout << text;
                wfm_string_free(text);
            }
            if (rc == 0 && !metrics_out.empty()) {
                rc = check(wfm_report_save(r, metrics_out.c_str()));
            }
            wfm_report_destroy(r);
        }
        wfm_model_destroy(model);
        return rc;
    }
    if (*inpaint) {
        wfm_model* model = nullptr;
        if (int rc = check(wfm_model_load(ckpt.c_str(), &model))) {
            return rc;
        }
        const int rc = check(
            wfm_model_inpaint_file(model, image.c_str(), mask.c_str(), out_png.c_str()));
        wfm_model_destroy(model);
        return rc;
    }
    if (*masks) {
        int w = 0, h = 0;
        double lo = 0, hi = 0;
        if (!parse_size(size, w, h) || !parse_interval(interval, lo, hi)) {
            std::cerr << "error: expected --size WxH and --interval lo,hi\n";
            return 1;
        }
        return check(wfm_make_masks(kind.c_str(), lo, hi, n, w, h, seed, out_dir.c_str()));
    }
    if (*toy) {
        int w = 0, h = 0;
        if (!parse_size(size, w, h)) {
            std::cerr << "error: expected --size WxH\n";
            return 1;
        }
        return check(wfm_make_toy_data(n, w, h, seed, out_dir.c_str()));
    }
    if (*report) {
        wfm_report* r = nullptr;
        if (int rc = check(wfm_report_load(report_in.c_str(), &r))) {
            return rc;
        }
        char* text = nullptr;
        const int rc = check(wfm_report_format(r, format.c_str(), &text));
        if (rc == 0) {
            std::cout << text;
            wfm_string_free(text);
        }
        wfm_report_destroy(r);
        return rc;
    }
    return 0;
}
