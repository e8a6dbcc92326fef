#ifndef CXR_GRAPH_HPP
#define CXR_GRAPH_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cxr/tensor.hpp"

namespace cxr {

enum class LayerKind {
    Conv,
    DepthwiseSeparableConv,
    BatchNorm,
    ReLU,
    MaxPool,
    GlobalAvgPool,
    Flatten,
    Dense,
    Dropout,
    ResidualAdd,
    SoftmaxOutput,
};

const char* layer_kind_name(LayerKind kind);
LayerKind layer_kind_from_name(const std::string& name);

struct LayerSpec {
    std::string id;
    LayerKind kind{};
    int out_channels = 0;    // conv, depthwise-separable-conv
    int kernel = 0;          // conv kernels and maxpool window
    int stride = 1;
    int padding = 0;
    int units = 0;           // dense
    float rate = 0.0f;       // dropout
    float l2 = 0.0f;         // dense weight penalty coefficient
    std::string skip_source; // residual-add only
    bool head = false;       // head layers stay trainable under freeze()

    bool has_params() const;
};

/// How images must be prepared before entering the model. Stored with the
/// model so eval/explain runs are self-contained.
struct PreprocessSpec {
    int size = 64;
    enum class Range { Unit, Raw255 } range = Range::Unit;
    int channels = 1; // 1 = keep grayscale, 3 = replicate
};

struct ModelGraph {
    std::vector<LayerSpec> layers;
    int in_channels = 1;
    int in_h = 64;
    int in_w = 64;
    int num_classes = 4;
    std::vector<std::string> class_names; // size num_classes
    std::string template_name = "custom";
    PreprocessSpec preprocess;

    int find_layer(const std::string& id) const; // -1 if absent
    /// Last conv-kind layer (conv or depthwise-separable), -1 if none.
    int last_conv_layer() const;

    /// Per-layer output shape without the batch dimension ({C,H,W} or {D}).
    /// Also checks the structural invariants and throws ShapeError on a bad
    /// chain (duplicate ids, dangling skip, non-softmax final layer, ...).
    std::vector<std::vector<int>> infer_shapes() const;
};

struct ParamTensor {
    std::string name;
    Tensor value;
    bool trainable = true;
};

struct LayerParams {
    std::vector<ParamTensor> tensors;

    ParamTensor* find(const std::string& name);
    const ParamTensor* find(const std::string& name) const;
};

struct ParamStore {
    std::vector<LayerParams> layers; // aligned with ModelGraph::layers
};

enum class Mode { Train, Eval };

struct LayerTrace {
    Tensor output;
    std::vector<std::int32_t> pool_argmax;
    Tensor dropout_mask;        // scaled mask, multiplies forward and backward
    Tensor bn_mean, bn_var;     // batch statistics actually used
    bool bn_used_batch_stats = false;
    Tensor depthwise_out;       // intermediate of depthwise-separable conv
};

struct ForwardTrace {
    Mode mode = Mode::Eval;
    Tensor input;
    std::vector<LayerTrace> layers;
};

struct ForwardResult {
    Tensor probs; // copy of the final layer output
    ForwardTrace trace;
};

/// Runs the graph on a batch. Train mode applies dropout (needs rng) and
/// batch-statistics batchnorm (updating running stats in `params`, which is
/// the only mutation); eval mode never touches params and is deterministic.
ForwardResult forward(const ModelGraph& model, ParamStore& params, const Tensor& batch,
                      Mode mode, Rng* rng = nullptr);

struct Gradients {
    /// Aligned with the graph; only trainable tensors receive entries.
    std::vector<LayerParams> param_grads;
    /// d(objective)/d(layer output) for every layer at or below the seed.
    std::vector<Tensor> activation_grads;

    const Tensor* find_param_grad(int layer_index, const std::string& name) const;
};

/// Reverse-mode pass. `seed_layer` is the index of the layer whose output the
/// seed gradient refers to (-1 means the final layer). Seeding at the layer
/// feeding softmax-output differentiates the pre-softmax logits, which is how
/// the class-activation mapping consumes this.
Gradients backward(const ModelGraph& model, const ParamStore& params, const ForwardTrace& trace,
                   const Tensor& grad_out, int seed_layer = -1);

enum class Template { MiniVgg, MiniResnet, MiniXception, MiniEffnetHead };

Template template_from_name(const std::string& name);
const char* template_name(Template t);

struct HeadConfig {
    int units = 0;                 // 0 = template default
    std::string activation = "relu"; // "relu" or "linear"
    float dropout = -1.0f;         // <0 = template default
    float l2 = -1.0f;              // <0 = template default
};

struct BuiltModel {
    ModelGraph graph;
    ParamStore params;
};

/// Instantiates one of the four mini architectures with He-uniform seeded
/// parameters. Input must be spatially at least 32x32.
BuiltModel build_model(Template t, int in_channels, int in_h, int in_w,
                       const HeadConfig& head = {}, std::uint64_t seed = 7,
                       int num_classes = 4);

/// Initializes parameters for an arbitrary (e.g. hand-built) graph.
ParamStore init_params(const ModelGraph& model, std::uint64_t seed);

/// Marks all but the last `trainable_last` parameterized backbone layers
/// frozen. Head layers always stay trainable. Batchnorm running statistics
/// are never trainable regardless of the flag.
void freeze(const ModelGraph& model, ParamStore& params, int trainable_last);

struct ParamCounts {
    std::int64_t total = 0;
    std::int64_t trainable = 0;
    std::int64_t frozen = 0;
    std::int64_t bn_state = 0; // running mean/var values, included in frozen
};

ParamCounts param_count(const ModelGraph& model, const ParamStore& params);

/// Model file round-trip (versioned little-endian binary).
void save_model(const std::filesystem::path& path, const ModelGraph& model,
                const ParamStore& params);
BuiltModel load_model(const std::filesystem::path& path);

} // namespace cxr

#endif
