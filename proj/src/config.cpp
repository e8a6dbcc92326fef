#include <fstream>
#include <set>

#include <json.hpp>

#include "cxr/config.hpp"
#include "cxr/errors.hpp"

namespace cxr {

namespace {

using nlohmann::json;

void require_keys(const json& obj, const std::string& prefix, const std::set<std::string>& allowed) {
    if (!obj.is_object()) throw ConfigError("config: " + prefix + " must be an object");
    std::string unknown;
    for (const auto& [key, _] : obj.items()) {
        if (!allowed.count(key)) unknown += (unknown.empty() ? "" : ", ") + prefix + key;
    }
    if (!unknown.empty()) throw ConfigError("config: unknown keys: " + unknown);
}

int geti(const json& o, const char* key, int def) {
    if (!o.contains(key)) return def;
    if (!o[key].is_number_integer()) {
        throw ConfigError(std::string("config: ") + key + " must be an integer");
    }
    return o[key].get<int>();
}

double getd(const json& o, const char* key, double def) {
    if (!o.contains(key)) return def;
    if (!o[key].is_number()) throw ConfigError(std::string("config: ") + key + " must be a number");
    return o[key].get<double>();
}

std::string gets(const json& o, const char* key, const std::string& def) {
    if (!o.contains(key)) return def;
    if (!o[key].is_string()) throw ConfigError(std::string("config: ") + key + " must be a string");
    return o[key].get<std::string>();
}

std::uint64_t getu64(const json& o, const char* key, std::uint64_t def) {
    if (!o.contains(key)) return def;
    if (!o[key].is_number_integer() || (o[key].is_number_integer() && o[key].get<std::int64_t>() < 0)) {
        throw ConfigError(std::string("config: ") + key + " must be a non-negative integer");
    }
    return o[key].get<std::uint64_t>();
}

} // namespace

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());

    json root;
    try {
        root = json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::exception& e) {
        throw ConfigError("config: " + path.string() + ": " + e.what());
    }
    require_keys(root, "", {"dataset", "model", "train", "output"});

    RunConfig cfg;
    if (root.contains("dataset")) {
        const json& d = root["dataset"];
        require_keys(d, "dataset.", {"root", "preprocess"});
        cfg.dataset_root = gets(d, "root", cfg.dataset_root);
        if (d.contains("preprocess")) {
            const json& p = d["preprocess"];
            require_keys(p, "dataset.preprocess.", {"size", "range", "channels"});
            if (p.contains("size")) {
                cfg.preprocess.size = geti(p, "size", cfg.preprocess.size);
                cfg.preprocess_size_set = true;
            }
            if (p.contains("range")) {
                const std::string r = gets(p, "range", "unit");
                if (r == "unit") {
                    cfg.preprocess.range = PreprocessSpec::Range::Unit;
                } else if (r == "raw255") {
                    cfg.preprocess.range = PreprocessSpec::Range::Raw255;
                } else {
                    throw ConfigError("config: dataset.preprocess.range must be unit or raw255");
                }
                cfg.preprocess_range_set = true;
            }
            if (p.contains("channels")) {
                cfg.preprocess.channels = geti(p, "channels", cfg.preprocess.channels);
                cfg.preprocess_channels_set = true;
            }
        }
    }
    if (root.contains("model")) {
        const json& m = root["model"];
        require_keys(m, "model.",
                     {"template", "head_units", "head_activation", "trainable_last", "seed"});
        cfg.model_template = gets(m, "template", cfg.model_template);
        cfg.head_units = geti(m, "head_units", cfg.head_units);
        cfg.head_activation = gets(m, "head_activation", cfg.head_activation);
        cfg.trainable_last = geti(m, "trainable_last", cfg.trainable_last);
        cfg.model_seed = getu64(m, "seed", cfg.model_seed);
    }
    if (root.contains("train")) {
        const json& t = root["train"];
        require_keys(t, "train.",
                     {"epochs", "batch_size", "base_lr", "optimizer", "adam_beta1", "adam_beta2",
                      "adam_eps", "l2_coeff", "plateau_factor", "plateau_patience",
                      "plateau_min_lr", "min_delta", "early_stop_patience", "seed"});
        TrainConfig& tc = cfg.train;
        tc.epochs = geti(t, "epochs", tc.epochs);
        tc.batch_size = geti(t, "batch_size", tc.batch_size);
        tc.base_lr = static_cast<float>(getd(t, "base_lr", tc.base_lr));
        tc.optimizer = gets(t, "optimizer", tc.optimizer);
        tc.adam_beta1 = static_cast<float>(getd(t, "adam_beta1", tc.adam_beta1));
        tc.adam_beta2 = static_cast<float>(getd(t, "adam_beta2", tc.adam_beta2));
        tc.adam_eps = static_cast<float>(getd(t, "adam_eps", tc.adam_eps));
        tc.l2_coeff = static_cast<float>(getd(t, "l2_coeff", tc.l2_coeff));
        tc.plateau_factor = static_cast<float>(getd(t, "plateau_factor", tc.plateau_factor));
        tc.plateau_patience = geti(t, "plateau_patience", tc.plateau_patience);
        tc.plateau_min_lr = static_cast<float>(getd(t, "plateau_min_lr", tc.plateau_min_lr));
        tc.min_delta = static_cast<float>(getd(t, "min_delta", tc.min_delta));
        tc.early_stop_patience = geti(t, "early_stop_patience", tc.early_stop_patience);
        tc.seed = getu64(t, "seed", tc.seed);
    }
    if (root.contains("output")) {
        const json& o = root["output"];
        require_keys(o, "output.", {"dir"});
        cfg.output_dir = gets(o, "dir", cfg.output_dir);
    }
    return cfg;
}

} // namespace cxr
