#include "wfm/train.hpp"

#include "wfm/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

namespace fs = std::filesystem;

namespace wfm {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return "";
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

int64_t to_int(const std::string& v) {
    size_t pos = 0;
    const long long r = std::stoll(v, &pos);
    if (pos != v.size()) {
        throw std::invalid_argument("not an integer");
    }
    return r;
}

double to_double(const std::string& v) {
    size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) {
        throw std::invalid_argument("not a number");
    }
    return r;
}

bool to_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") {
        return true;
    }
    if (v == "false" || v == "0" || v == "no") {
        return false;
    }
    throw std::invalid_argument("not a boolean");
}

std::string num(double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

DataKind parse_data_kind(const std::string& v) {
    for (auto k : {DataKind::Toy, DataKind::ToyDir, DataKind::Structured3D}) {
        if (v == data_kind_name(k)) {
            return k;
        }
    }
    throw std::invalid_argument("expected toy, toy_dir or structured3d");
}

struct Field {
    const char* key;
    std::function<std::string(const TrainConfig&)> get;
    std::function<void(TrainConfig&, const std::string&)> set;
};

#define WFM_INT(key, member)                                                          \
    Field{key, [](const TrainConfig& c) { return std::to_string(c.member); },         \
          [](TrainConfig& c, const std::string& v) { c.member = to_int(v); }}
#define WFM_DOUBLE(key, member)                                                       \
    Field{key, [](const TrainConfig& c) { return num(c.member); },                    \
          [](TrainConfig& c, const std::string& v) { c.member = to_double(v); }}
#define WFM_STRING(key, member)                                                       \
    Field{key, [](const TrainConfig& c) { return c.member; },                         \
          [](TrainConfig& c, const std::string& v) { c.member = v; }}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        WFM_INT("height", height),
        WFM_INT("width", width),
        WFM_INT("epochs", epochs),
        WFM_INT("batch", batch),
        WFM_INT("max_steps", max_steps),
        WFM_DOUBLE("lr_g", lr_g),
        WFM_DOUBLE("lr_d", lr_d),
        WFM_DOUBLE("weight_decay", weight_decay),
        WFM_DOUBLE("beta1", beta1),
        WFM_DOUBLE("beta2", beta2),
        WFM_DOUBLE("grad_clip", grad_clip),
        Field{"d_first", [](const TrainConfig& c) { return std::string(c.d_first ? "true" : "false"); },
              [](TrainConfig& c, const std::string& v) { c.d_first = to_bool(v); }},
        WFM_DOUBLE("loss.rec", loss.rec),
        WFM_DOUBLE("loss.perc", loss.perc),
        WFM_DOUBLE("loss.adv", loss.adv),
        WFM_DOUBLE("loss.gp", loss.gp),
        WFM_DOUBLE("loss.fm", loss.fm),
        Field{"seed", [](const TrainConfig& c) { return std::to_string(c.seed); },
              [](TrainConfig& c, const std::string& v) {
                  c.seed = static_cast<uint64_t>(std::stoull(v));
              }},
        WFM_INT("channels", generator.channels),
        Field{"blocks",
              [](const TrainConfig& c) {
                  const auto& b = c.generator.blocks;
                  return std::to_string(b[0]) + "," + std::to_string(b[1]) + "," +
                         std::to_string(b[2]) + "," + std::to_string(b[3]);
              },
              [](TrainConfig& c, const std::string& v) {
                  std::vector<int64_t> parts;
                  std::stringstream ss(v);
                  for (std::string item; std::getline(ss, item, ',');) {
                      parts.push_back(to_int(trim(item)));
                  }
                  if (parts.size() == 1) {
                      c.generator.blocks.fill(parts[0]);
                  } else if (parts.size() == 4) {
                      std::copy(parts.begin(), parts.end(), c.generator.blocks.begin());
                  } else {
                      throw std::invalid_argument("expected 1 or 4 comma-separated counts");
                  }
              }},
        Field{"mixer", [](const TrainConfig& c) { return std::string(mixer_name(c.generator.mixer)); },
              [](TrainConfig& c, const std::string& v) { c.generator.mixer = parse_mixer(v); }},
        WFM_INT("mlp_ratio", generator.mlp_ratio),
        WFM_INT("mixer_kernel", generator.mixer_kernel),
        WFM_INT("disc_channels", discriminator.channels),
        WFM_INT("disc_layers", discriminator.layers),
        Field{"perceptual",
              [](const TrainConfig& c) { return std::string(perceptual_mode_name(c.perceptual)); },
              [](TrainConfig& c, const std::string& v) { c.perceptual = parse_perceptual_mode(v); }},
        WFM_STRING("perceptual_weights", perceptual_weights),
        WFM_DOUBLE("mask.ratio_min", masks.ratio_min),
        WFM_DOUBLE("mask.ratio_max", masks.ratio_max),
        WFM_DOUBLE("mask.interval_width", masks.interval_width),
        Field{"data", [](const TrainConfig& c) { return std::string(data_kind_name(c.data)); },
              [](TrainConfig& c, const std::string& v) { c.data = parse_data_kind(v); }},
        WFM_STRING("data_root", data_root),
        WFM_STRING("lighting", lighting),
        WFM_INT("toy_scenes", toy_scenes),
        WFM_INT("val_scenes", val_scenes),
        WFM_STRING("output_dir", output_dir),
        WFM_INT("log_every", log_every),
        WFM_INT("checkpoint_every", checkpoint_every),
    };
    return table;
}

#undef WFM_INT
#undef WFM_DOUBLE
#undef WFM_STRING

struct Preset {
    const char* name;
    MixerVariant mixer;
    std::optional<PerceptualMode> perceptual;
};

const std::vector<Preset>& presets() {
    static const std::vector<Preset> table = {
        {"wfm", MixerVariant::WFM, std::nullopt},
        {"fm_no_window", MixerVariant::FMNoWindow, std::nullopt},
        {"ffc", MixerVariant::FFC, std::nullopt},
        {"gated_only", MixerVariant::GatedOnly, std::nullopt},
        {"wfm_2d", MixerVariant::WFM2D, std::nullopt},
        {"lrfpl", MixerVariant::WFM, PerceptualMode::LRF},
    };
    return table;
}

Rng mask_stream(uint64_t seed) {
    std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), 0x6d61736bu};
    return Rng(seq);
}

Rng epoch_stream(uint64_t seed, int64_t epoch) {
    std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                      static_cast<uint32_t>(epoch), 0x65706f63u};
    return Rng(seq);
}

std::vector<torch::optim::OptimizerParamGroup> decay_groups(torch::nn::Module& module,
                                                            double lr, const TrainConfig& c) {
    // Weight decay applies to kernels only; gains, biases and activation
    // scalars are left undecayed.
    std::vector<torch::Tensor> decay, plain;
    for (auto& p : module.parameters()) {
        (p.dim() > 1 ? decay : plain).push_back(p);
    }
    auto opts = [&](double wd) {
        return std::make_unique<torch::optim::AdamWOptions>(
            torch::optim::AdamWOptions(lr).betas({c.beta1, c.beta2}).weight_decay(wd));
    };
    std::vector<torch::optim::OptimizerParamGroup> groups;
    groups.emplace_back(decay, opts(c.weight_decay));
    groups.emplace_back(plain, opts(0.0));
    return groups;
}

void add_module_tensors(CheckpointData& data, const std::string& prefix,
                        const torch::nn::Module& module) {
    for (const auto& item : module.named_parameters()) {
        data.tensors.emplace_back(prefix + item.key(), item.value().detach());
    }
    for (const auto& item : module.named_buffers()) {
        data.tensors.emplace_back(prefix + item.key(), item.value().detach());
    }
}

void restore_module_tensors(const std::map<std::string, torch::Tensor>& tensors,
                            const std::string& prefix, torch::nn::Module& module) {
    torch::NoGradGuard no_grad;
    auto restore = [&](const std::string& key, torch::Tensor& dst) {
        const auto it = tensors.find(prefix + key);
        if (it == tensors.end()) {
            throw IoError("checkpoint lacks tensor '" + prefix + key + "'");
        }
        if (it->second.sizes() != dst.sizes()) {
            throw IoError("checkpoint tensor '" + prefix + key + "' has shape " +
                          c10::str(it->second.sizes()) + ", model expects " +
                          c10::str(dst.sizes()));
        }
        dst.copy_(it->second);
    };
    for (auto& item : module.named_parameters()) {
        restore(item.key(), item.value());
    }
    for (auto& item : module.named_buffers()) {
        restore(item.key(), item.value());
    }
}

void add_optimizer_tensors(CheckpointData& data, const std::string& prefix,
                           torch::optim::AdamW& opt) {
    auto& groups = opt.param_groups();
    for (size_t g = 0; g < groups.size(); ++g) {
        const auto& params = groups[g].params();
        for (size_t i = 0; i < params.size(); ++i) {
            const auto it = opt.state().find(params[i].unsafeGetTensorImpl());
            if (it == opt.state().end()) {
                continue;
            }
            const auto& st = static_cast<const torch::optim::AdamWParamState&>(*it->second);
            const std::string key = prefix + std::to_string(g) + "/" + std::to_string(i) + "/";
            data.tensors.emplace_back(key + "step", torch::tensor(st.step(), torch::kInt64));
            data.tensors.emplace_back(key + "exp_avg", st.exp_avg());
            data.tensors.emplace_back(key + "exp_avg_sq", st.exp_avg_sq());
        }
    }
}

void restore_optimizer_tensors(const std::map<std::string, torch::Tensor>& tensors,
                               const std::string& prefix, torch::optim::AdamW& opt) {
    auto& groups = opt.param_groups();
    for (size_t g = 0; g < groups.size(); ++g) {
        const auto& params = groups[g].params();
        for (size_t i = 0; i < params.size(); ++i) {
            const std::string key = prefix + std::to_string(g) + "/" + std::to_string(i) + "/";
            const auto step = tensors.find(key + "step");
            if (step == tensors.end()) {
                continue;
            }
            auto st = std::make_unique<torch::optim::AdamWParamState>();
            st->step(step->second.item<int64_t>());
            st->exp_avg(tensors.at(key + "exp_avg").clone());
            st->exp_avg_sq(tensors.at(key + "exp_avg_sq").clone());
            opt.state()[params[i].unsafeGetTensorImpl()] = std::move(st);
        }
    }
}

const char* dtype_name(torch::ScalarType t) {
    switch (t) {
    case torch::kFloat32: return "float32";
    case torch::kFloat64: return "float64";
    case torch::kInt64: return "int64";
    default: throw IoError("checkpoint: unsupported dtype " + std::string(c10::toString(t)));
    }
}

torch::ScalarType dtype_from(const std::string& name) {
    if (name == "float32") {
        return torch::kFloat32;
    }
    if (name == "float64") {
        return torch::kFloat64;
    }
    if (name == "int64") {
        return torch::kInt64;
    }
    throw IoError("checkpoint: unknown dtype '" + name + "'");
}

constexpr char kMagic[8] = {'W', 'F', 'M', 'C', 'K', 'P', 'T', '1'};

std::string env_data_root() {
    const char* v = std::getenv("WFM_DATA_ROOT");
    return v ? std::string(v) : std::string();
}

}  // namespace

const char* data_kind_name(DataKind kind) {
    switch (kind) {
    case DataKind::Toy: return "toy";
    case DataKind::ToyDir: return "toy_dir";
    case DataKind::Structured3D: return "structured3d";
    }
    return "unknown";
}

void TrainConfig::validate() const {
    generator.validate();
    generator.validate_input(height, width);
    loss.validate();
    if (epochs < 1 || batch < 1 || max_steps < 0) {
        throw ConfigError("epochs and batch must be >= 1 and max_steps >= 0");
    }
    // Zero rates are allowed so a step can be run as a no-op.
    if (!(lr_g >= 0.0) || !(lr_d >= 0.0)) {
        throw ConfigError("learning rates must be non-negative");
    }
    if (weight_decay < 0.0 || beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
        throw ConfigError("weight_decay must be >= 0 and betas in [0, 1)");
    }
    if (grad_clip < 0.0) {
        throw ConfigError("grad_clip must be >= 0");
    }
    if (discriminator.channels < 1 || discriminator.layers < 1) {
        throw ConfigError("discriminator needs >= 1 channel and layer");
    }
    if ((height >> discriminator.layers) < 1 || (width >> discriminator.layers) < 1) {
        throw ConfigError("image is too small for the discriminator depth");
    }
    if (!(masks.ratio_min > 0.0 && masks.ratio_min < masks.ratio_max && masks.ratio_max <= 1.0 &&
          masks.interval_width > 0.0)) {
        throw ConfigError("mask ratios need 0 < ratio_min < ratio_max <= 1 and a positive width");
    }
    if (data == DataKind::Toy && width != 2 * height) {
        throw ConfigError("toy data needs width == 2 * height");
    }
    if (toy_scenes < 1 || val_scenes < 1 || log_every < 1) {
        throw ConfigError("toy_scenes, val_scenes and log_every must be >= 1");
    }
    if (checkpoint_every < 0) {
        throw ConfigError("checkpoint_every must be >= 0");
    }
    if (lighting != "raw" && lighting != "cold" && lighting != "warm") {
        throw ConfigError("lighting must be raw, cold or warm");
    }
}

TrainConfig parse_train_config(const std::string& text, TrainConfig base) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        }
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        const auto& table = fields();
        const auto it = std::find_if(table.begin(), table.end(),
                                     [&](const Field& f) { return key == f.key; });
        if (it == table.end()) {
            throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key +
                              "'");
        }
        try {
            it->set(base, value);
        } catch (const std::exception& e) {
            throw ConfigError("config line " + std::to_string(lineno) + ": bad value '" + value +
                              "' for " + key + " (" + e.what() + ")");
        }
    }
    return base;
}

TrainConfig load_train_config(const std::string& path, TrainConfig base) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open config '" + path + "'");
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_train_config(ss.str(), std::move(base));
}

std::string format_train_config(const TrainConfig& config) {
    std::string out;
    for (const auto& f : fields()) {
        out += std::string(f.key) + " = " + f.get(config) + "\n";
    }
    return out;
}

std::vector<std::string> preset_names() {
    std::vector<std::string> names;
    for (const auto& p : presets()) {
        names.emplace_back(p.name);
    }
    return names;
}

TrainConfig apply_preset(TrainConfig config, const std::string& name) {
    for (const auto& p : presets()) {
        if (name == p.name) {
            config.generator.mixer = p.mixer;
            if (p.perceptual) {
                config.perceptual = *p.perceptual;
            }
            return config;
        }
    }
    std::string known;
    for (const auto& n : preset_names()) {
        known += (known.empty() ? "" : ", ") + n;
    }
    throw ConfigError("unknown preset '" + name + "' (known: " + known + ")");
}

TrainConfig ablation_preset(const std::string& name) { return apply_preset(TrainConfig{}, name); }

std::vector<std::pair<std::string, double>> StepScalars::named() const {
    return {{"rec", rec}, {"perc", perc}, {"adv", adv}, {"fm", fm},
            {"g_total", g_total}, {"d", d}, {"gp", gp}};
}

Trainer::Trainer(TrainConfig config, LogFn log)
    : config_(std::move(config)), log_(std::move(log)), mask_rng_(mask_stream(config_.seed)) {
    config_.validate();
    torch::manual_seed(config_.seed);
    generator_ = Generator(config_.generator);
    discriminator_ = PatchDiscriminator(config_.discriminator);
    extractor_ = make_perceptual_extractor(config_.perceptual, config_.perceptual_weights,
                                           [this](const std::string& m) {
                                               if (log_) {
                                                   log_("warning: " + m);
                                               }
                                           });
    opt_g_ = std::make_unique<torch::optim::AdamW>(decay_groups(*generator_, config_.lr_g, config_),
                                                   torch::optim::AdamWOptions(config_.lr_g));
    opt_d_ = std::make_unique<torch::optim::AdamW>(
        decay_groups(*discriminator_, config_.lr_d, config_), torch::optim::AdamWOptions(config_.lr_d));
}

const SceneSource& Trainer::train_source() {
    if (!train_source_) {
        const auto& c = config_;
        const std::string root = c.data_root.empty() ? env_data_root() : c.data_root;
        switch (c.data) {
        case DataKind::Toy:
            train_source_ = std::make_unique<ToyCorpus>(static_cast<size_t>(c.toy_scenes),
                                                         c.height, c.width, c.seed);
            break;
        case DataKind::ToyDir:
            if (root.empty()) {
                throw ConfigError("data_root (or WFM_DATA_ROOT) is required for toy_dir data");
            }
            train_source_ = std::make_unique<ToyDirCorpus>(
                fs::is_directory(fs::path(root) / "train") ? (fs::path(root) / "train").string()
                                                           : root);
            break;
        case DataKind::Structured3D:
            if (root.empty()) {
                throw ConfigError("data_root (or WFM_DATA_ROOT) is required for structured3d data");
            }
            train_source_ = std::make_unique<Structured3DSplit>(
                root, Split::Train, Structured3DOptions{c.lighting, c.height, c.width}, log_);
            break;
        }
    }
    return *train_source_;
}

const SceneSource& Trainer::val_source() {
    if (!val_source_) {
        const auto& c = config_;
        const std::string root = c.data_root.empty() ? env_data_root() : c.data_root;
        switch (c.data) {
        case DataKind::Toy:
            // Held out: a different seed stream than the training rooms.
            val_source_ = std::make_unique<ToyCorpus>(static_cast<size_t>(c.val_scenes), c.height,
                                                      c.width, c.seed ^ 0x9e3779b97f4a7c15ull);
            break;
        case DataKind::ToyDir: {
            const auto val = fs::path(root) / "val";
            if (!fs::is_directory(val) && log_) {
                log_("warning: no val/ directory under " + root + "; validating on training pairs");
            }
            val_source_ = std::make_unique<ToyDirCorpus>(fs::is_directory(val) ? val.string() : root);
            break;
        }
        case DataKind::Structured3D:
            val_source_ = std::make_unique<Structured3DSplit>(
                root, Split::Val, Structured3DOptions{c.lighting, c.height, c.width}, log_);
            break;
        }
    }
    return *val_source_;
}

Batch Trainer::make_batch(const SceneSource& source, const std::vector<size_t>& indices) {
    Batch b;
    std::vector<torch::Tensor> images, masks;
    for (auto i : indices) {
        auto pair = source.get(i);
        if (pair.empty.size(1) != config_.height || pair.empty.size(2) != config_.width) {
            throw PreconditionError("scene '" + pair.id + "' is " + c10::str(pair.empty.sizes()) +
                                    ", config expects " + std::to_string(config_.height) + "x" +
                                    std::to_string(config_.width) + " (HxW)");
        }
        const auto mask = sample_training_mask(mask_rng_, config_.height, config_.width,
                                               &pair.semantics, config_.masks);
        auto sample = make_training_sample(pair, mask);
        images.push_back(sample.target);
        masks.push_back(sample.mask);
        b.ids.push_back(pair.id);
    }
    b.images = torch::stack(images);
    b.masks = torch::stack(masks);
    return b;
}

void Trainer::set_discriminator_trainable(bool on) {
    for (auto& p : discriminator_->parameters()) {
        p.set_requires_grad(on);
    }
}

void Trainer::abort_nonfinite(const std::string& what, const Batch& batch) const {
    std::string ids;
    for (const auto& id : batch.ids) {
        ids += (ids.empty() ? "" : ",") + id;
    }
    std::string dump;
    try {
        fs::create_directories(config_.output_dir);
        dump = (fs::path(config_.output_dir) /
                ("nonfinite_step" + std::to_string(step_ + 1) + ".bin")).string();
        write_checkpoint(dump, {{{"seed", std::to_string(config_.seed)},
                                 {"step", std::to_string(step_ + 1)},
                                 {"scenes", ids}},
                                {{"images", batch.images}, {"masks", batch.masks}}});
    } catch (const std::exception&) {
        dump = "(dump failed)";
    }
    throw NumericError(what + " at step " + std::to_string(step_ + 1) + " (seed " +
                       std::to_string(config_.seed) + ", scenes " + ids + "); batch written to " +
                       dump);
}

void Trainer::check_finite(const StepScalars& s, const Batch& batch) const {
    for (const auto& [name, v] : s.named()) {
        if (!std::isfinite(v)) {
            abort_nonfinite("non-finite " + name + " loss", batch);
        }
    }
}

StepScalars Trainer::discriminator_update(const Batch& batch, const torch::Tensor& fake) {
    StepScalars s;
    opt_d_->zero_grad();
    const auto real_logits = discriminator_->forward(batch.images);
    const auto fake_logits = discriminator_->forward(fake);
    const auto pm = patch_mask(batch.masks, real_logits.size(2), real_logits.size(3));
    const auto d_loss = discriminator_loss(real_logits, fake_logits, pm);
    const auto gp = gradient_penalty(batch.images,
                                     [this](const torch::Tensor& x) { return discriminator_->forward(x); });
    s.d = d_loss.item<double>();
    s.gp = gp.item<double>();
    check_finite(s, batch);
    (d_loss + config_.loss.gp * gp).backward();
    if (config_.grad_clip > 0) {
        torch::nn::utils::clip_grad_norm_(discriminator_->parameters(), config_.grad_clip);
    }
    opt_d_->step();
    return s;
}

void Trainer::generator_terms(const Batch& batch, const torch::Tensor& fake, StepScalars& s,
                              torch::Tensor& total) {
    set_discriminator_trainable(false);
    // Re-enable D even if a loss term throws.
    struct Unfreeze {
        Trainer* t;
        ~Unfreeze() { t->set_discriminator_trainable(true); }
    } unfreeze{this};
    std::vector<torch::Tensor> real_features;
    {
        torch::NoGradGuard no_grad;
        real_features = discriminator_->forward_with_features(batch.images).features;
    }
    const auto fake_out = discriminator_->forward_with_features(fake);
    GeneratorLossTerms terms{reconstruction_loss(batch.images, fake, batch.masks),
                             perceptual_loss(batch.images, fake, *extractor_),
                             generator_adv_loss(fake_out.logits),
                             feature_matching_loss(real_features, fake_out.features)};
    total = total_generator_loss(terms, config_.loss);
    s.rec = terms.rec.item<double>();
    s.perc = terms.perc.item<double>();
    s.adv = terms.adv.item<double>();
    s.fm = terms.fm.item<double>();
    s.g_total = total.item<double>();
}

StepScalars Trainer::train_step(const Batch& batch) {
    generator_->train();
    discriminator_->train();
    torch::Tensor fake;
    try {
        fake = generator_->forward(make_generator_input(batch.images, batch.masks));
    } catch (const NumericError& e) {
        abort_nonfinite(std::string("generator forward: ") + e.what(), batch);
    }

    StepScalars s;
    auto g_update = [&] {
        torch::Tensor total;
        // D is unfrozen again on return; the graph was built without D
        // leaves, so no D gradients flow from the backward pass.
        generator_terms(batch, fake, s, total);
        check_finite(s, batch);
        opt_g_->zero_grad();
        total.backward();
        if (config_.grad_clip > 0) {
            torch::nn::utils::clip_grad_norm_(generator_->parameters(), config_.grad_clip);
        }
        opt_g_->step();
    };
    auto d_update = [&] {
        const auto d = discriminator_update(batch, fake.detach());
        s.d = d.d;
        s.gp = d.gp;
    };
    if (config_.d_first) {
        d_update();
        g_update();
    } else {
        g_update();
        d_update();
    }
    ++step_;
    history_.push_back(s);
    return s;
}

torch::Tensor Trainer::inpaint(const torch::Tensor& image, const torch::Tensor& mask) {
    torch::NoGradGuard no_grad;
    generator_->eval();
    return generator_->generate(image, mask);
}

std::vector<EpochLog> Trainer::fit() {
    const auto& train = train_source();
    if (train.size() == 0) {
        throw PreconditionError("training split is empty");
    }
    fs::create_directories(config_.output_dir);
    const auto n = static_cast<int64_t>(train.size());
    const int64_t steps_per_epoch = (n + config_.batch - 1) / config_.batch;
    std::vector<EpochLog> logs;

    auto log_step = [&](const StepScalars& s) {
        if (log_ && (step_ % config_.log_every == 0)) {
            std::ostringstream out;
            out << "step " << step_;
            for (const auto& [name, v] : s.named()) {
                out << " " << name << "=" << v;
            }
            log_(out.str());
        }
    };
    auto validate = [&]() {
        EpochLog e;
        e.epoch = epoch_;
        const auto& val = val_source();
        e.validation = evaluate([this](const torch::Tensor& x,
                                       const torch::Tensor& m) { return inpaint(x, m); },
                                val, EvalGrid::validation(),
                                EvalOptions{config_.seed, false, static_cast<size_t>(config_.val_scenes)});
        if (log_) {
            for (const auto& c : e.validation.cells) {
                std::ostringstream out;
                out << "val epoch " << epoch_ << " " << mask_kind_name(c.kind) << " "
                    << c.interval.label() << " mae=" << c.mae << " psnr=" << c.psnr
                    << " ssim=" << c.ssim;
                log_(out.str());
            }
        }
        return e;
    };
    auto checkpoint = [&](const std::string& name) {
        save((fs::path(config_.output_dir) / name).string());
        save((fs::path(config_.output_dir) / "latest.ckpt").string());
    };
    const bool limited = config_.max_steps > 0;

    while (epoch_ < config_.epochs) {
        std::vector<size_t> perm(static_cast<size_t>(n));
        for (size_t i = 0; i < perm.size(); ++i) {
            perm[i] = i;
        }
        Rng order = epoch_stream(config_.seed, epoch_);
        std::shuffle(perm.begin(), perm.end(), order);

        double sum = 0;
        int64_t count = 0;
        for (int64_t b = batch_in_epoch_; b < steps_per_epoch; ++b) {
            if (limited && step_ >= config_.max_steps) {
                logs.push_back(validate());
                checkpoint("step_" + std::to_string(step_) + ".ckpt");
                return logs;
            }
            const auto first = static_cast<size_t>(b * config_.batch);
            const auto last = std::min(perm.size(), first + static_cast<size_t>(config_.batch));
            const auto batch = make_batch(train, {perm.begin() + static_cast<long>(first),
                                                  perm.begin() + static_cast<long>(last)});
            const auto s = train_step(batch);
            batch_in_epoch_ = b + 1;
            sum += s.g_total;
            ++count;
            log_step(s);
        }
        ++epoch_;
        batch_in_epoch_ = 0;
        auto e = validate();
        e.mean_g_total = count ? sum / static_cast<double>(count) : 0.0;
        logs.push_back(std::move(e));
        if (config_.checkpoint_every > 0 && epoch_ % config_.checkpoint_every == 0) {
            char name[32];
            std::snprintf(name, sizeof(name), "epoch_%03lld.ckpt", static_cast<long long>(epoch_));
            checkpoint(name);
        } else {
            save((fs::path(config_.output_dir) / "latest.ckpt").string());
        }
        if (limited && step_ >= config_.max_steps) {
            break;
        }
    }
    return logs;
}

void Trainer::save(const std::string& path) const {
    CheckpointData data;
    data.meta["config"] = format_train_config(config_);
    data.meta["step"] = std::to_string(step_);
    data.meta["epoch"] = std::to_string(epoch_);
    data.meta["batch_in_epoch"] = std::to_string(batch_in_epoch_);
    std::ostringstream rng;
    rng << mask_rng_;
    data.meta["mask_rng"] = rng.str();
    add_module_tensors(data, "generator/", *generator_);
    add_module_tensors(data, "discriminator/", *discriminator_);
    add_optimizer_tensors(data, "opt_g/", *opt_g_);
    add_optimizer_tensors(data, "opt_d/", *opt_d_);
    auto history = torch::zeros({static_cast<int64_t>(history_.size()), 7}, torch::kFloat64);
    for (size_t i = 0; i < history_.size(); ++i) {
        const auto named = history_[i].named();
        for (size_t k = 0; k < named.size(); ++k) {
            history[static_cast<int64_t>(i)][static_cast<int64_t>(k)] = named[k].second;
        }
    }
    data.tensors.emplace_back("history", history);
    write_checkpoint(path, data);
}

std::unique_ptr<Trainer> Trainer::load(const std::string& path, LogFn log) {
    auto data = read_checkpoint(path);
    const auto meta = [&](const std::string& key) {
        const auto it = data.meta.find(key);
        if (it == data.meta.end()) {
            throw IoError("checkpoint '" + path + "' lacks '" + key + "'");
        }
        return it->second;
    };
    auto trainer = std::make_unique<Trainer>(parse_train_config(meta("config")), std::move(log));
    std::map<std::string, torch::Tensor> tensors(data.tensors.begin(), data.tensors.end());
    restore_module_tensors(tensors, "generator/", *trainer->generator_);
    restore_module_tensors(tensors, "discriminator/", *trainer->discriminator_);
    restore_optimizer_tensors(tensors, "opt_g/", *trainer->opt_g_);
    restore_optimizer_tensors(tensors, "opt_d/", *trainer->opt_d_);
    trainer->step_ = std::stoll(meta("step"));
    trainer->epoch_ = std::stoll(meta("epoch"));
    trainer->batch_in_epoch_ = std::stoll(meta("batch_in_epoch"));
    std::istringstream rng(meta("mask_rng"));
    rng >> trainer->mask_rng_;
    if (!rng) {
        throw IoError("checkpoint '" + path + "' has a corrupt RNG state");
    }
    if (const auto it = tensors.find("history"); it != tensors.end()) {
        const auto h = it->second;
        for (int64_t i = 0; i < h.size(0); ++i) {
            StepScalars s;
            double* fieldsp[] = {&s.rec, &s.perc, &s.adv, &s.fm, &s.g_total, &s.d, &s.gp};
            for (int64_t k = 0; k < 7; ++k) {
                *fieldsp[k] = h[i][k].item<double>();
            }
            trainer->history_.push_back(s);
        }
    }
    return trainer;
}

void Trainer::extend_run(int64_t epochs, int64_t max_steps) {
    auto next = config_;
    next.epochs = epochs;
    next.max_steps = max_steps;
    next.validate();
    config_ = next;
}

LoadedGenerator load_generator(const std::string& checkpoint_path) {
    auto data = read_checkpoint(checkpoint_path);
    const auto it = data.meta.find("config");
    if (it == data.meta.end()) {
        throw IoError("checkpoint '" + checkpoint_path + "' lacks a config");
    }
    LoadedGenerator out;
    out.config = parse_train_config(it->second);
    out.generator = Generator(out.config.generator);
    std::map<std::string, torch::Tensor> tensors(data.tensors.begin(), data.tensors.end());
    restore_module_tensors(tensors, "generator/", *out.generator);
    out.generator->eval();
    return out;
}

void write_checkpoint(const std::string& path, const CheckpointData& data) {
    nlohmann::json header;
    header["meta"] = data.meta;
    header["tensors"] = nlohmann::json::array();
    std::vector<torch::Tensor> payloads;
    uint64_t offset = 0;
    for (const auto& [name, t] : data.tensors) {
        auto c = t.detach().cpu().contiguous();
        const uint64_t nbytes = static_cast<uint64_t>(c.numel()) * c.element_size();
        header["tensors"].push_back({{"name", name},
                                     {"dtype", dtype_name(c.scalar_type())},
                                     {"shape", c.sizes().vec()},
                                     {"offset", offset},
                                     {"nbytes", nbytes}});
        offset += nbytes;
        payloads.push_back(c);
    }
    const std::string text = header.dump();
    const auto tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) {
            throw IoError("cannot write checkpoint '" + path + "'");
        }
        out.write(kMagic, sizeof(kMagic));
        const uint64_t len = text.size();
        out.write(reinterpret_cast<const char*>(&len), sizeof(len));
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const auto& p : payloads) {
            out.write(static_cast<const char*>(p.data_ptr()),
                      static_cast<std::streamsize>(p.numel() * p.element_size()));
        }
        if (!out) {
            throw IoError("short write on checkpoint '" + path + "'");
        }
    }
    fs::rename(tmp, path);
}

CheckpointData read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open checkpoint '" + path + "'");
    }
    char magic[sizeof(kMagic)];
    uint64_t len = 0;
    in.read(magic, sizeof(magic));
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0 || len > (1ull << 32)) {
        throw IoError("'" + path + "' is not a checkpoint");
    }
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    const auto base = static_cast<uint64_t>(in.tellg());
    CheckpointData data;
    try {
        const auto header = nlohmann::json::parse(text);
        data.meta = header.at("meta").get<std::map<std::string, std::string>>();
        for (const auto& e : header.at("tensors")) {
            auto shape = e.at("shape").get<std::vector<int64_t>>();
            auto t = torch::empty(shape, dtype_from(e.at("dtype").get<std::string>()));
            const auto nbytes = e.at("nbytes").get<uint64_t>();
            if (nbytes != static_cast<uint64_t>(t.numel()) * t.element_size()) {
                throw IoError("checkpoint tensor size mismatch");
            }
            in.seekg(static_cast<std::streamoff>(base + e.at("offset").get<uint64_t>()));
            in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
            if (!in) {
                throw IoError("checkpoint '" + path + "' is truncated");
            }
            data.tensors.emplace_back(e.at("name").get<std::string>(), t);
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("corrupt checkpoint header in '" + path + "': " + e.what());
    }
    return data;
}

}  // namespace wfm
