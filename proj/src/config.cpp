#include "blindloss/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace blindloss {

namespace {

[[noreturn]] void config_fail(const std::string& path, const std::string& detail) {
    throw ContractViolation("config: " + path + ": " + detail);
}

// Strict section reader: every access marks a key as known, and `finish`
// rejects anything unvisited.
class Section {
  public:
    Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) config_fail(path_, "expected an object");
    }

    bool has(const char* key) {
        seen_.insert(key);
        return j_.contains(key);
    }

    template <typename T>
    T get(const char* key, T fallback) {
        seen_.insert(key);
        if (!j_.contains(key)) return fallback;
        try {
            return j_.at(key).get<T>();
        } catch (const nlohmann::json::exception& e) {
            config_fail(path_ + "." + key, e.what());
        }
    }

    const Json& raw(const char* key) {
        seen_.insert(key);
        return j_.at(key);
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!seen_.count(key)) config_fail(path_ + "." + key, "unknown key");
        }
    }

  private:
    const Json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

HeadMode head_mode_from_string(const std::string& s, const std::string& path) {
    if (s == "shared") return HeadMode::Shared;
    if (s == "shared_sg") return HeadMode::SharedStopGradient;
    if (s == "individual") return HeadMode::Individual;
    config_fail(path, "expected one of shared | shared_sg | individual, got '" + s + "'");
}

const char* head_mode_to_string(HeadMode m) {
    switch (m) {
        case HeadMode::Shared: return "shared";
        case HeadMode::SharedStopGradient: return "shared_sg";
        default: return "individual";
    }
}

CclForm ccl_form_from_string(const std::string& s, const std::string& path) {
    if (s == "diagonal") return CclForm::Diagonal;
    if (s == "whitening") return CclForm::Whitening;
    config_fail(path, "expected diagonal | whitening, got '" + s + "'");
}

PredSource pred_source_from_string(const std::string& s, const std::string& path) {
    if (s == "augmented") return PredSource::Augmented;
    if (s == "original") return PredSource::Original;
    config_fail(path, "expected augmented | original, got '" + s + "'");
}

}  // namespace

TrainConfig default_config() { return TrainConfig{}; }

TrainConfig config_from_json(const Json& j) {
    TrainConfig cfg;
    Section root(j, "config");
    cfg.seed = root.get<std::uint64_t>("seed", cfg.seed);
    cfg.experiment_seeds =
        root.get<std::vector<std::uint64_t>>("experiment_seeds", cfg.experiment_seeds);

    if (root.has("optimizer")) {
        Section s(root.raw("optimizer"), "config.optimizer");
        cfg.optimizer.base_lr = s.get("base_lr", cfg.optimizer.base_lr);
        cfg.optimizer.lr_power = s.get("lr_power", cfg.optimizer.lr_power);
        cfg.optimizer.momentum = s.get("momentum", cfg.optimizer.momentum);
        cfg.optimizer.weight_decay = s.get("weight_decay", cfg.optimizer.weight_decay);
        cfg.optimizer.batch_size = s.get("batch_size", cfg.optimizer.batch_size);
        cfg.optimizer.total_iters = s.get("total_iters", cfg.optimizer.total_iters);
        s.finish();
    }
    if (root.has("losses")) {
        Section s(root.raw("losses"), "config.losses");
        cfg.losses.use_cml = s.get("use_cml", cfg.losses.use_cml);
        cfg.losses.use_ccl = s.get("use_ccl", cfg.losses.use_ccl);
        cfg.losses.use_cwcl = s.get("use_cwcl", cfg.losses.use_cwcl);
        cfg.losses.use_sdcl = s.get("use_sdcl", cfg.losses.use_sdcl);
        cfg.losses.omega1 = s.get("omega1", cfg.losses.omega1);
        cfg.losses.omega2 = s.get("omega2", cfg.losses.omega2);
        cfg.losses.omega3 = s.get("omega3", cfg.losses.omega3);
        cfg.losses.omega4 = s.get("omega4", cfg.losses.omega4);
        cfg.losses.tau = s.get("tau", cfg.losses.tau);
        cfg.losses.covariance_normalized =
            s.get("covariance_normalized", cfg.losses.covariance_normalized);
        if (s.has("ccl_form"))
            cfg.losses.ccl_form =
                ccl_form_from_string(s.get<std::string>("ccl_form", "diagonal"), "config.losses.ccl_form");
        cfg.losses.ce_on_augmented = s.get("ce_on_augmented", cfg.losses.ce_on_augmented);
        if (s.has("sdcl_pred_source"))
            cfg.losses.sdcl_pred_source = pred_source_from_string(
                s.get<std::string>("sdcl_pred_source", "augmented"), "config.losses.sdcl_pred_source");
        cfg.losses.normalize_embeddings =
            s.get("normalize_embeddings", cfg.losses.normalize_embeddings);
        cfg.losses.instance_norm_eps = s.get("instance_norm_eps", cfg.losses.instance_norm_eps);
        s.finish();
    }
    if (root.has("cwcl")) {
        Section s(root.raw("cwcl"), "config.cwcl");
        cfg.cwcl.classes_per_image = s.get("classes_per_image", cfg.cwcl.classes_per_image);
        cfg.cwcl.anchors_per_class = s.get("anchors_per_class", cfg.cwcl.anchors_per_class);
        cfg.cwcl.negatives_per_class = s.get("negatives_per_class", cfg.cwcl.negatives_per_class);
        s.finish();
    }
    if (root.has("sdcl")) {
        Section s(root.raw("sdcl"), "config.sdcl");
        cfg.sdcl.anchors_per_image = s.get("anchors_per_image", cfg.sdcl.anchors_per_image);
        cfg.sdcl.negatives_per_anchor = s.get("negatives_per_anchor", cfg.sdcl.negatives_per_anchor);
        s.finish();
    }
    if (root.has("head")) {
        Section s(root.raw("head"), "config.head");
        cfg.head.embed_dim = s.get("embed_dim", cfg.head.embed_dim);
        if (s.has("mode"))
            cfg.head.mode = head_mode_from_string(s.get<std::string>("mode", "shared"), "config.head.mode");
        s.finish();
    }
    if (root.has("model")) {
        Section s(root.raw("model"), "config.model");
        cfg.model.encoder_widths = s.get("encoder_widths", cfg.model.encoder_widths);
        cfg.model.decoder_widths = s.get("decoder_widths", cfg.model.decoder_widths);
        cfg.model.encoder_blocks = static_cast<int>(cfg.model.encoder_widths.size());
        cfg.model.decoder_blocks = static_cast<int>(cfg.model.decoder_widths.size());
        s.finish();
    }
    if (root.has("data")) {
        Section s(root.raw("data"), "config.data");
        cfg.data.classes = s.get("classes", cfg.data.classes);
        cfg.data.height = s.get("height", cfg.data.height);
        cfg.data.width = s.get("width", cfg.data.width);
        cfg.data.train_scenes = s.get("train_scenes", cfg.data.train_scenes);
        cfg.data.eval_scenes = s.get("eval_scenes", cfg.data.eval_scenes);
        cfg.data.class_floor = s.get("class_floor", cfg.data.class_floor);
        cfg.data.texture_amp = s.get("texture_amp", cfg.data.texture_amp);
        cfg.data.jitter_strength = s.get("jitter_strength", cfg.data.jitter_strength);
        cfg.data.train_style = s.get("train_style", cfg.data.train_style);
        cfg.data.eval_style = s.get("eval_style", cfg.data.eval_style);
        cfg.data.corpus_seed = s.get("corpus_seed", cfg.data.corpus_seed);
        s.finish();
    }
    root.finish();
    validate_config(cfg);
    return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ContractViolation("config: cannot open " + path.string());
    Json j;
    try {
        j = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ContractViolation("config: " + path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

Json config_to_json(const TrainConfig& cfg) {
    Json j;
    j["seed"] = cfg.seed;
    j["experiment_seeds"] = cfg.experiment_seeds;
    j["optimizer"] = {{"base_lr", cfg.optimizer.base_lr},
                      {"lr_power", cfg.optimizer.lr_power},
                      {"momentum", cfg.optimizer.momentum},
                      {"weight_decay", cfg.optimizer.weight_decay},
                      {"batch_size", cfg.optimizer.batch_size},
                      {"total_iters", cfg.optimizer.total_iters}};
    j["losses"] = {{"use_cml", cfg.losses.use_cml},
                   {"use_ccl", cfg.losses.use_ccl},
                   {"use_cwcl", cfg.losses.use_cwcl},
                   {"use_sdcl", cfg.losses.use_sdcl},
                   {"omega1", cfg.losses.omega1},
                   {"omega2", cfg.losses.omega2},
                   {"omega3", cfg.losses.omega3},
                   {"omega4", cfg.losses.omega4},
                   {"tau", cfg.losses.tau},
                   {"covariance_normalized", cfg.losses.covariance_normalized},
                   {"ccl_form", cfg.losses.ccl_form == CclForm::Whitening ? "whitening" : "diagonal"},
                   {"ce_on_augmented", cfg.losses.ce_on_augmented},
                   {"sdcl_pred_source",
                    cfg.losses.sdcl_pred_source == PredSource::Original ? "original" : "augmented"},
                   {"normalize_embeddings", cfg.losses.normalize_embeddings},
                   {"instance_norm_eps", cfg.losses.instance_norm_eps}};
    j["cwcl"] = {{"classes_per_image", cfg.cwcl.classes_per_image},
                 {"anchors_per_class", cfg.cwcl.anchors_per_class},
                 {"negatives_per_class", cfg.cwcl.negatives_per_class}};
    j["sdcl"] = {{"anchors_per_image", cfg.sdcl.anchors_per_image},
                 {"negatives_per_anchor", cfg.sdcl.negatives_per_anchor}};
    j["head"] = {{"embed_dim", cfg.head.embed_dim}, {"mode", head_mode_to_string(cfg.head.mode)}};
    j["model"] = {{"encoder_widths", cfg.model.encoder_widths},
                  {"decoder_widths", cfg.model.decoder_widths}};
    j["data"] = {{"classes", cfg.data.classes},
                 {"height", cfg.data.height},
                 {"width", cfg.data.width},
                 {"train_scenes", cfg.data.train_scenes},
                 {"eval_scenes", cfg.data.eval_scenes},
                 {"class_floor", cfg.data.class_floor},
                 {"texture_amp", cfg.data.texture_amp},
                 {"jitter_strength", cfg.data.jitter_strength},
                 {"train_style", cfg.data.train_style},
                 {"eval_style", cfg.data.eval_style},
                 {"corpus_seed", cfg.data.corpus_seed}};
    return j;
}

std::string dump_config(const TrainConfig& cfg) { return config_to_json(cfg).dump(2) + "\n"; }

void validate_config(const TrainConfig& cfg) {
    const auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ContractViolation("config: " + what);
    };
    require(cfg.losses.omega1 >= 0 && cfg.losses.omega2 >= 0 && cfg.losses.omega3 >= 0 &&
                cfg.losses.omega4 >= 0,
            "loss weights must be >= 0");
    require(cfg.optimizer.base_lr > 0, "optimizer.base_lr must be > 0");
    require(cfg.optimizer.total_iters >= 1, "optimizer.total_iters must be >= 1");
    require(cfg.optimizer.batch_size >= 1, "optimizer.batch_size must be >= 1");
    require(cfg.optimizer.momentum >= 0 && cfg.optimizer.momentum < 1,
            "optimizer.momentum must be in [0, 1)");
    require(cfg.optimizer.weight_decay >= 0, "optimizer.weight_decay must be >= 0");
    require(cfg.losses.tau > 0, "losses.tau must be > 0");
    require(cfg.losses.instance_norm_eps > 0, "losses.instance_norm_eps must be > 0");
    require(cfg.cwcl.classes_per_image >= 1 && cfg.cwcl.anchors_per_class >= 1 &&
                cfg.cwcl.negatives_per_class >= 1,
            "cwcl counts must be >= 1");
    require(cfg.sdcl.anchors_per_image >= 1 && cfg.sdcl.negatives_per_anchor >= 1,
            "sdcl counts must be >= 1");
    require(cfg.head.embed_dim >= 1, "head.embed_dim must be >= 1");
    require(!cfg.model.encoder_widths.empty() && !cfg.model.decoder_widths.empty(),
            "model widths must be non-empty");
    require(cfg.data.classes >= 2, "data.classes must be >= 2");
    require(cfg.data.class_floor >= 0 && cfg.data.class_floor <= 1,
            "data.class_floor must be in [0, 1]");
    require(cfg.data.texture_amp >= 0, "data.texture_amp must be >= 0");
    require(cfg.data.jitter_strength >= 0 && cfg.data.jitter_strength <= 1,
            "data.jitter_strength must be in [0, 1]");
    require(is_known_style(cfg.data.train_style) && is_known_style(cfg.data.eval_style),
            "data styles must name known presets");
    require(!cfg.experiment_seeds.empty(), "experiment_seeds must be non-empty");
}

// ---- manifest ------------------------------------------------------------------

std::string blindloss_version() { return "blindloss 0.1.0"; }

Json manifest_to_json(const RunManifest& m) {
    Json j;
    j["version"] = m.version;
    j["command"] = m.command;
    j["args"] = m.args;
    j["timestamp"] = m.timestamp;
    j["out_dir"] = m.out_dir;
    j["config"] = m.config;
    j["corpus"] = m.corpus;
    j["outputs"] = m.outputs;
    return j;
}

RunManifest manifest_from_json(const Json& j) {
    RunManifest m;
    try {
        m.version = j.at("version").get<std::string>();
        m.command = j.at("command").get<std::string>();
        m.args = j.at("args").get<std::vector<std::string>>();
        m.timestamp = j.at("timestamp").get<std::string>();
        m.out_dir = j.at("out_dir").get<std::string>();
        m.config = j.at("config");
        m.corpus = j.at("corpus").get<std::string>();
        m.outputs = j.at("outputs").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ContractViolation(std::string("manifest: ") + e.what());
    }
    return m;
}

void write_manifest(const std::filesystem::path& path, const RunManifest& m) {
    std::ofstream out(path);
    if (!out) throw DomainError("write_manifest: cannot open " + path.string());
    out << manifest_to_json(m).dump(2) << "\n";
}

RunManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ContractViolation("manifest: cannot open " + path.string());
    Json j;
    try {
        j = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ContractViolation("manifest: " + path.string() + ": " + e.what());
    }
    return manifest_from_json(j);
}

}  // namespace blindloss
