#ifndef CXR_CONFIG_HPP
#define CXR_CONFIG_HPP

#include <filesystem>
#include <string>

#include "cxr/graph.hpp"
#include "cxr/trainer.hpp"

namespace cxr {

/// Everything a train run needs, resolvable from a JSON config file with
/// CLI flags layered on top (flags win).
struct RunConfig {
    std::string dataset_root;
    PreprocessSpec preprocess; // size/range/channels; template default if untouched
    bool preprocess_size_set = false;
    bool preprocess_range_set = false;
    bool preprocess_channels_set = false;

    std::string model_template = "mini_vgg";
    int head_units = 0; // 0 = template default
    std::string head_activation = "relu";
    int trainable_last = -1; // <0 = train everything
    std::uint64_t model_seed = 7;

    TrainConfig train;
    std::string output_dir = "out";
};

/// Parses the JSON config file. Unknown keys anywhere are rejected with a
/// ConfigError listing them; missing keys keep defaults.
RunConfig load_run_config(const std::filesystem::path& path);

} // namespace cxr

#endif
