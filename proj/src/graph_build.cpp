#include <cmath>

#include "cxr/graph.hpp"

namespace cxr {

namespace {

const std::vector<std::string> kDefaultClasses = {"COVID19", "NORMAL", "PNEUMONIA",
                                                  "TUBERCULOSIS"};

struct GraphBuilder {
    ModelGraph graph;

    LayerSpec& add(LayerSpec spec) {
        graph.layers.push_back(std::move(spec));
        return graph.layers.back();
    }
    void conv(const std::string& id, int out_ch, int k, int stride, int padding,
              bool head = false) {
        add({.id = id, .kind = LayerKind::Conv, .out_channels = out_ch, .kernel = k,
             .stride = stride, .padding = padding, .head = head});
    }
    void sepconv(const std::string& id, int out_ch, int k, int stride, int padding) {
        add({.id = id, .kind = LayerKind::DepthwiseSeparableConv, .out_channels = out_ch,
             .kernel = k, .stride = stride, .padding = padding});
    }
    void batchnorm(const std::string& id) { add({.id = id, .kind = LayerKind::BatchNorm}); }
    void relu(const std::string& id, bool head = false) {
        add({.id = id, .kind = LayerKind::ReLU, .head = head});
    }
    void maxpool(const std::string& id, int window, int stride) {
        add({.id = id, .kind = LayerKind::MaxPool, .kernel = window, .stride = stride});
    }
    void gap(const std::string& id, bool head = false) {
        add({.id = id, .kind = LayerKind::GlobalAvgPool, .head = head});
    }
    void flatten(const std::string& id, bool head = false) {
        add({.id = id, .kind = LayerKind::Flatten, .head = head});
    }
    void dense(const std::string& id, int units, float l2 = 0.0f, bool head = false) {
        add({.id = id, .kind = LayerKind::Dense, .units = units, .l2 = l2, .head = head});
    }
    void dropout(const std::string& id, float rate, bool head = false) {
        add({.id = id, .kind = LayerKind::Dropout, .rate = rate, .head = head});
    }
    void residual_add(const std::string& id, const std::string& skip) {
        add({.id = id, .kind = LayerKind::ResidualAdd, .skip_source = skip});
    }
    void softmax(const std::string& id) {
        add({.id = id, .kind = LayerKind::SoftmaxOutput, .head = true});
    }
};

void add_flatten_head(GraphBuilder& b, int units, const std::string& activation, float l2,
                      int num_classes) {
    b.flatten("head_flatten", true);
    b.dense("head_dense1", units, l2, true);
    if (activation == "relu") b.relu("head_relu", true);
    b.dense("head_dense2", num_classes, 0.0f, true);
    b.softmax("softmax");
}

} // namespace

Template template_from_name(const std::string& name) {
    if (name == "mini_vgg") return Template::MiniVgg;
    if (name == "mini_resnet") return Template::MiniResnet;
    if (name == "mini_xception") return Template::MiniXception;
    if (name == "mini_effnet_head") return Template::MiniEffnetHead;
    throw ValueError("unknown model template: " + name);
}

const char* template_name(Template t) {
    switch (t) {
        case Template::MiniVgg: return "mini_vgg";
        case Template::MiniResnet: return "mini_resnet";
        case Template::MiniXception: return "mini_xception";
        case Template::MiniEffnetHead: return "mini_effnet_head";
    }
    return "?";
}

BuiltModel build_model(Template t, int in_channels, int in_h, int in_w, const HeadConfig& head,
                       std::uint64_t seed, int num_classes) {
    if (in_h < 32 || in_w < 32) {
        throw ShapeError("build_model: input must be spatially at least 32x32");
    }
    if (head.activation != "relu" && head.activation != "linear") {
        throw ValueError("build_model: head activation must be relu or linear");
    }

    GraphBuilder b;
    b.graph.in_channels = in_channels;
    b.graph.in_h = in_h;
    b.graph.in_w = in_w;
    b.graph.num_classes = num_classes;
    b.graph.class_names = kDefaultClasses;
    if (num_classes != 4) {
        b.graph.class_names.resize(static_cast<size_t>(num_classes));
        for (int i = 0; i < num_classes; ++i) {
            if (b.graph.class_names[static_cast<size_t>(i)].empty()) {
                b.graph.class_names[static_cast<size_t>(i)] = "CLASS" + std::to_string(i);
            }
        }
    }
    b.graph.template_name = template_name(t);
    b.graph.preprocess.size = in_h;
    b.graph.preprocess.channels = in_channels;
    b.graph.preprocess.range =
        t == Template::MiniEffnetHead ? PreprocessSpec::Range::Raw255 : PreprocessSpec::Range::Unit;

    switch (t) {
        case Template::MiniVgg: {
            // blocks of two then three 3x3 convs, each closed by a 2x2 maxpool
            const int chans[3] = {8, 16, 32};
            for (int blk = 0; blk < 3; ++blk) {
                const std::string p = "b" + std::to_string(blk + 1) + "_";
                const int n_convs = blk == 2 ? 3 : 2;
                for (int ci = 0; ci < n_convs; ++ci) {
                    b.conv(p + "conv" + std::to_string(ci + 1), chans[blk], 3, 1, 1);
                    b.relu(p + "relu" + std::to_string(ci + 1));
                }
                b.maxpool(p + "pool", 2, 2);
            }
            const int units = head.units > 0 ? head.units : 128;
            add_flatten_head(b, units, head.activation, head.l2 >= 0 ? head.l2 : 0.0f,
                             num_classes);
            break;
        }
        case Template::MiniResnet: {
            b.conv("stem_conv", 16, 3, 1, 1);
            b.batchnorm("stem_bn");
            b.relu("stem_relu");
            b.maxpool("stem_pool", 2, 2);
            // stage 1: one residual block at 16 channels
            b.conv("rb1_conv1", 16, 3, 1, 1);
            b.batchnorm("rb1_bn1");
            b.relu("rb1_relu1");
            b.conv("rb1_conv2", 16, 3, 1, 1);
            b.batchnorm("rb1_bn2");
            b.residual_add("rb1_add", "stem_pool");
            b.relu("rb1_relu2");
            // stage 2: strided projection then a residual block at 32 channels
            b.conv("stage2_conv", 32, 3, 2, 1);
            b.batchnorm("stage2_bn");
            b.relu("stage2_relu");
            b.conv("rb2_conv1", 32, 3, 1, 1);
            b.batchnorm("rb2_bn1");
            b.relu("rb2_relu1");
            b.conv("rb2_conv2", 32, 3, 1, 1);
            b.batchnorm("rb2_bn2");
            b.residual_add("rb2_add", "stage2_relu");
            b.relu("rb2_relu2");
            const int units = head.units > 0 ? head.units : 128;
            add_flatten_head(b, units, head.activation, head.l2 >= 0 ? head.l2 : 0.0f,
                             num_classes);
            break;
        }
        case Template::MiniXception: {
            b.conv("entry_conv1", 8, 3, 2, 1);
            b.relu("entry_relu1");
            b.conv("entry_conv2", 16, 3, 1, 1);
            b.relu("entry_relu2");
            b.sepconv("sep1", 32, 3, 1, 1);
            b.relu("sep1_relu");
            b.maxpool("sep1_pool", 2, 2);
            b.sepconv("sep2", 32, 3, 1, 1);
            b.relu("sep2_relu");
            b.maxpool("sep2_pool", 2, 2);
            const int units = head.units > 0 ? head.units : 64;
            add_flatten_head(b, units, head.activation, head.l2 >= 0 ? head.l2 : 0.0f,
                             num_classes);
            break;
        }
        case Template::MiniEffnetHead: {
            b.conv("stem_conv", 16, 3, 2, 1);
            b.batchnorm("stem_bn");
            b.relu("stem_relu");
            b.conv("mid_conv", 32, 3, 1, 1);
            b.batchnorm("mid_bn");
            b.relu("mid_relu");
            b.maxpool("mid_pool", 2, 2);
            b.conv("top_conv", 256, 3, 1, 1);
            b.batchnorm("top_bn");
            b.relu("top_relu");
            b.gap("head_gap", true);
            b.dropout("head_dropout", head.dropout >= 0 ? head.dropout : 0.4f, true);
            const int units = head.units > 0 ? head.units : 225;
            b.dense("head_dense1", units, head.l2 >= 0 ? head.l2 : 1e-4f, true);
            if (head.activation == "relu") b.relu("head_relu", true);
            b.dense("head_dense2", num_classes, 0.0f, true);
            b.softmax("softmax");
            break;
        }
    }

    BuiltModel built;
    built.graph = std::move(b.graph);
    built.params = init_params(built.graph, seed);
    return built;
}

ParamStore init_params(const ModelGraph& model, std::uint64_t seed) {
    const auto shapes = model.infer_shapes();
    Rng rng(seed);
    ParamStore store;
    store.layers.resize(model.layers.size());

    for (size_t i = 0; i < model.layers.size(); ++i) {
        const LayerSpec& spec = model.layers[i];
        const std::vector<int>& in_shape = i == 0
            ? std::vector<int>{model.in_channels, model.in_h, model.in_w}
            : shapes[i - 1];
        LayerParams& lp = store.layers[i];
        switch (spec.kind) {
            case LayerKind::Conv: {
                const int cin = in_shape[0];
                Tensor w({spec.out_channels, cin, spec.kernel, spec.kernel});
                he_uniform_fill(w, cin * spec.kernel * spec.kernel, rng);
                lp.tensors.push_back({"weight", std::move(w), true});
                lp.tensors.push_back({"bias", Tensor({spec.out_channels}), true});
                break;
            }
            case LayerKind::DepthwiseSeparableConv: {
                const int cin = in_shape[0];
                Tensor dw({cin, 1, spec.kernel, spec.kernel});
                he_uniform_fill(dw, spec.kernel * spec.kernel, rng);
                Tensor pw({spec.out_channels, cin, 1, 1});
                he_uniform_fill(pw, cin, rng);
                lp.tensors.push_back({"depthwise", std::move(dw), true});
                lp.tensors.push_back({"pointwise", std::move(pw), true});
                lp.tensors.push_back({"bias", Tensor({spec.out_channels}), true});
                break;
            }
            case LayerKind::BatchNorm: {
                const int c = in_shape[0];
                lp.tensors.push_back({"gamma", Tensor::full({c}, 1.0f), true});
                lp.tensors.push_back({"beta", Tensor({c}), true});
                lp.tensors.push_back({"running_mean", Tensor({c}), false});
                lp.tensors.push_back({"running_var", Tensor::full({c}, 1.0f), false});
                break;
            }
            case LayerKind::Dense: {
                const int d = in_shape[0];
                Tensor w({d, spec.units});
                he_uniform_fill(w, d, rng);
                lp.tensors.push_back({"weight", std::move(w), true});
                lp.tensors.push_back({"bias", Tensor({spec.units}), true});
                break;
            }
            default:
                break;
        }
    }
    return store;
}

void freeze(const ModelGraph& model, ParamStore& params, int trainable_last) {
    if (trainable_last < 0) throw ValueError("freeze: trainable_last must be non-negative");

    std::vector<size_t> backbone;
    for (size_t i = 0; i < model.layers.size(); ++i) {
        if (model.layers[i].has_params() && !model.layers[i].head) backbone.push_back(i);
    }
    const size_t n_train = std::min(backbone.size(), static_cast<size_t>(trainable_last));
    const size_t first_trainable = backbone.size() - n_train;

    for (size_t bi = 0; bi < backbone.size(); ++bi) {
        const bool trainable = bi >= first_trainable;
        for (auto& t : params.layers[backbone[bi]].tensors) {
            if (t.name == "running_mean" || t.name == "running_var") continue;
            t.trainable = trainable;
        }
    }
    for (size_t i = 0; i < model.layers.size(); ++i) {
        if (!model.layers[i].head) continue;
        for (auto& t : params.layers[i].tensors) {
            if (t.name == "running_mean" || t.name == "running_var") continue;
            t.trainable = true;
        }
    }
}

ParamCounts param_count(const ModelGraph& model, const ParamStore& params) {
    (void)model;
    ParamCounts counts;
    for (const auto& lp : params.layers) {
        for (const auto& t : lp.tensors) {
            counts.total += t.value.numel();
            if (t.trainable) {
                counts.trainable += t.value.numel();
            }
            if (t.name == "running_mean" || t.name == "running_var") {
                counts.bn_state += t.value.numel();
            }
        }
    }
    counts.frozen = counts.total - counts.trainable;
    return counts;
}

} // namespace cxr
