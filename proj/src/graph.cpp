#include "cxr/graph.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "cxr/kernels.hpp"

namespace cxr {

namespace {

constexpr float kBnEps = 1e-5f;
constexpr float kBnMomentum = 0.9f; // running = momentum*running + (1-momentum)*batch

const char* kKindNames[] = {
    "conv", "depthwise-separable-conv", "batchnorm", "relu", "maxpool",
    "global-avg-pool", "flatten", "dense", "dropout", "residual-add", "softmax-output",
};

void add_into(Tensor& dst, const Tensor& src) {
    if (dst.empty()) {
        dst = src;
        return;
    }
    if (!dst.same_shape(src)) throw ShapeError("gradient accumulation shape mismatch");
    for (std::int64_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

} // namespace

const char* layer_kind_name(LayerKind kind) { return kKindNames[static_cast<int>(kind)]; }

LayerKind layer_kind_from_name(const std::string& name) {
    for (int i = 0; i <= static_cast<int>(LayerKind::SoftmaxOutput); ++i) {
        if (name == kKindNames[i]) return static_cast<LayerKind>(i);
    }
    throw ValueError("unknown layer kind: " + name);
}

bool LayerSpec::has_params() const {
    switch (kind) {
        case LayerKind::Conv:
        case LayerKind::DepthwiseSeparableConv:
        case LayerKind::BatchNorm:
        case LayerKind::Dense:
            return true;
        default:
            return false;
    }
}

int ModelGraph::find_layer(const std::string& id) const {
    for (size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].id == id) return static_cast<int>(i);
    }
    return -1;
}

int ModelGraph::last_conv_layer() const {
    for (int i = static_cast<int>(layers.size()) - 1; i >= 0; --i) {
        if (layers[static_cast<size_t>(i)].kind == LayerKind::Conv ||
            layers[static_cast<size_t>(i)].kind == LayerKind::DepthwiseSeparableConv) {
            return i;
        }
    }
    return -1;
}

std::vector<std::vector<int>> ModelGraph::infer_shapes() const {
    if (layers.empty()) throw ShapeError("model has no layers");
    std::set<std::string> ids;
    for (const auto& l : layers) {
        if (!ids.insert(l.id).second) throw ShapeError("duplicate layer id: " + l.id);
    }

    std::vector<std::vector<int>> shapes;
    shapes.reserve(layers.size());
    std::vector<int> cur = {in_channels, in_h, in_w};

    for (size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& l = layers[i];
        switch (l.kind) {
            case LayerKind::Conv: {
                if (cur.size() != 3) throw ShapeError(l.id + ": conv needs a C,H,W input");
                if (l.kernel > cur[1] + 2 * l.padding || l.kernel > cur[2] + 2 * l.padding) {
                    throw ShapeError(l.id + ": kernel exceeds padded input");
                }
                cur = {l.out_channels,
                       kernels::conv_out_extent(cur[1], l.kernel, l.stride, l.padding),
                       kernels::conv_out_extent(cur[2], l.kernel, l.stride, l.padding)};
                break;
            }
            case LayerKind::DepthwiseSeparableConv: {
                if (cur.size() != 3) throw ShapeError(l.id + ": separable conv needs a C,H,W input");
                cur = {l.out_channels,
                       kernels::conv_out_extent(cur[1], l.kernel, l.stride, l.padding),
                       kernels::conv_out_extent(cur[2], l.kernel, l.stride, l.padding)};
                break;
            }
            case LayerKind::BatchNorm:
                if (cur.size() != 3) throw ShapeError(l.id + ": batchnorm needs a C,H,W input");
                break;
            case LayerKind::ReLU:
            case LayerKind::Dropout:
                break;
            case LayerKind::MaxPool: {
                if (cur.size() != 3) throw ShapeError(l.id + ": maxpool needs a C,H,W input");
                if (l.kernel > cur[1] || l.kernel > cur[2]) {
                    throw ShapeError(l.id + ": pool window exceeds extent");
                }
                cur = {cur[0], (cur[1] - l.kernel) / l.stride + 1,
                       (cur[2] - l.kernel) / l.stride + 1};
                break;
            }
            case LayerKind::GlobalAvgPool:
                if (cur.size() != 3) throw ShapeError(l.id + ": global-avg-pool needs a C,H,W input");
                cur = {cur[0]};
                break;
            case LayerKind::Flatten: {
                int d = 1;
                for (int e : cur) d *= e;
                cur = {d};
                break;
            }
            case LayerKind::Dense:
                if (cur.size() != 1) throw ShapeError(l.id + ": dense needs a flat input");
                cur = {l.units};
                break;
            case LayerKind::ResidualAdd: {
                int src = find_layer(l.skip_source);
                if (src < 0 || src >= static_cast<int>(i)) {
                    throw ShapeError(l.id + ": skip source must be an earlier layer");
                }
                if (shapes[static_cast<size_t>(src)] != cur) {
                    throw ShapeError(l.id + ": skip source shape does not match");
                }
                break;
            }
            case LayerKind::SoftmaxOutput:
                if (cur.size() != 1 || cur[0] != num_classes) {
                    throw ShapeError(l.id + ": softmax-output needs a num_classes input");
                }
                break;
        }
        shapes.push_back(cur);
    }
    if (layers.back().kind != LayerKind::SoftmaxOutput) {
        throw ShapeError("final layer must be softmax-output");
    }
    return shapes;
}

ParamTensor* LayerParams::find(const std::string& name) {
    for (auto& t : tensors) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

const ParamTensor* LayerParams::find(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return &t;
    }
    return nullptr;
}

const Tensor* Gradients::find_param_grad(int layer_index, const std::string& name) const {
    if (layer_index < 0 || layer_index >= static_cast<int>(param_grads.size())) return nullptr;
    const ParamTensor* t = param_grads[static_cast<size_t>(layer_index)].find(name);
    return t ? &t->value : nullptr;
}

namespace {

bool layer_trainable(const LayerParams& lp) {
    for (const auto& t : lp.tensors) {
        if (t.name == "running_mean" || t.name == "running_var") continue;
        if (t.trainable) return true;
    }
    return false;
}

Tensor reshape(const Tensor& t, std::vector<int> shape) {
    return Tensor(std::move(shape), t.values());
}

void bn_forward(const LayerSpec& spec, LayerParams& lp, const Tensor& x, Mode mode,
                LayerTrace& lt) {
    const Tensor& gamma = lp.find("gamma")->value;
    const Tensor& beta = lp.find("beta")->value;
    Tensor& rm = lp.find("running_mean")->value;
    Tensor& rv = lp.find("running_var")->value;

    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t m = static_cast<std::int64_t>(n) * h * w;
    lt.output = Tensor(x.shape());

    const bool use_batch = mode == Mode::Train && layer_trainable(lp);
    lt.bn_used_batch_stats = use_batch;
    if (use_batch) {
        lt.bn_mean = Tensor({c});
        lt.bn_var = Tensor({c});
    }

    for (int ci = 0; ci < c; ++ci) {
        double mean, var;
        if (use_batch) {
            double s = 0.0, s2 = 0.0;
            for (int in_n = 0; in_n < n; ++in_n) {
                const float* plane = x.data() + ((static_cast<size_t>(in_n) * c + ci) * h) * w;
                for (int i = 0; i < h * w; ++i) {
                    s += plane[i];
                    s2 += static_cast<double>(plane[i]) * plane[i];
                }
            }
            mean = s / static_cast<double>(m);
            var = std::max(0.0, s2 / static_cast<double>(m) - mean * mean);
            lt.bn_mean[ci] = static_cast<float>(mean);
            lt.bn_var[ci] = static_cast<float>(var);
            rm[ci] = kBnMomentum * rm[ci] + (1.0f - kBnMomentum) * static_cast<float>(mean);
            rv[ci] = kBnMomentum * rv[ci] + (1.0f - kBnMomentum) * static_cast<float>(var);
        } else {
            mean = rm[ci];
            var = rv[ci];
        }
        const double inv_std = 1.0 / std::sqrt(var + kBnEps);
        const double g = gamma[ci], b = beta[ci];
        for (int in_n = 0; in_n < n; ++in_n) {
            const float* in_plane = x.data() + ((static_cast<size_t>(in_n) * c + ci) * h) * w;
            float* out_plane = lt.output.data() + ((static_cast<size_t>(in_n) * c + ci) * h) * w;
            for (int i = 0; i < h * w; ++i) {
                out_plane[i] = static_cast<float>((in_plane[i] - mean) * inv_std * g + b);
            }
        }
    }
    (void)spec;
}

struct BnBackwardResult {
    Tensor input;
    Tensor gamma;
    Tensor beta;
};

BnBackwardResult bn_backward(const LayerParams& lp, const Tensor& x, const LayerTrace& lt,
                             const Tensor& grad_out, bool want_param_grads) {
    const Tensor& gamma = lp.find("gamma")->value;
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t m = static_cast<std::int64_t>(n) * h * w;

    BnBackwardResult res;
    res.input = Tensor(x.shape());
    if (want_param_grads) {
        res.gamma = Tensor({c});
        res.beta = Tensor({c});
    }

    const Tensor& mean_t = lt.bn_used_batch_stats ? lt.bn_mean : lp.find("running_mean")->value;
    const Tensor& var_t = lt.bn_used_batch_stats ? lt.bn_var : lp.find("running_var")->value;

    for (int ci = 0; ci < c; ++ci) {
        const double mean = mean_t[ci];
        const double inv_std = 1.0 / std::sqrt(static_cast<double>(var_t[ci]) + kBnEps);
        const double g = gamma[ci];

        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int in_n = 0; in_n < n; ++in_n) {
            const float* xp = x.data() + ((static_cast<size_t>(in_n) * c + ci) * h) * w;
            const float* gp = grad_out.data() + ((static_cast<size_t>(in_n) * c + ci) * h) * w;
            for (int i = 0; i < h * w; ++i) {
                const double xhat = (xp[i] - mean) * inv_std;
                sum_dy += gp[i];
                sum_dy_xhat += gp[i] * xhat;
            }
        }
        if (want_param_grads) {
            res.gamma[ci] = static_cast<float>(sum_dy_xhat);
            res.beta[ci] = static_cast<float>(sum_dy);
        }

        for (int in_n = 0; in_n < n; ++in_n) {
            const float* xp = x.data() + ((static_cast<size_t>(in_n) * c + ci) * h) * w;
            const float* gp = grad_out.data() + ((static_cast<size_t>(in_n) * c + ci) * h) * w;
            float* op = res.input.data() + ((static_cast<size_t>(in_n) * c + ci) * h) * w;
            if (lt.bn_used_batch_stats) {
                const double inv_m = 1.0 / static_cast<double>(m);
                for (int i = 0; i < h * w; ++i) {
                    const double xhat = (xp[i] - mean) * inv_std;
                    op[i] = static_cast<float>(
                        g * inv_std * (gp[i] - sum_dy * inv_m - xhat * sum_dy_xhat * inv_m));
                }
            } else {
                for (int i = 0; i < h * w; ++i) {
                    op[i] = static_cast<float>(g * inv_std * gp[i]);
                }
            }
        }
    }
    return res;
}

} // namespace

ForwardResult forward(const ModelGraph& model, ParamStore& params, const Tensor& batch,
                      Mode mode, Rng* rng) {
    if (batch.rank() != 4 || batch.dim(1) != model.in_channels || batch.dim(2) != model.in_h ||
        batch.dim(3) != model.in_w) {
        throw ShapeError("forward: batch shape " + batch.shape_str() + " does not match model input");
    }
    if (params.layers.size() != model.layers.size()) {
        throw ShapeError("forward: param store does not match model");
    }
    model.infer_shapes();

    ForwardResult res;
    res.trace.mode = mode;
    res.trace.input = batch;
    res.trace.layers.resize(model.layers.size());

    const Tensor* cur = &res.trace.input;
    for (size_t i = 0; i < model.layers.size(); ++i) {
        const LayerSpec& spec = model.layers[i];
        LayerParams& lp = params.layers[i];
        LayerTrace& lt = res.trace.layers[i];

        switch (spec.kind) {
            case LayerKind::Conv:
                lt.output = kernels::conv2d(*cur, lp.find("weight")->value,
                                            lp.find("bias")->value, spec.stride, spec.padding);
                break;
            case LayerKind::DepthwiseSeparableConv:
                lt.depthwise_out = kernels::depthwise_conv2d(
                    *cur, lp.find("depthwise")->value, spec.stride, spec.padding);
                lt.output = kernels::conv2d(lt.depthwise_out, lp.find("pointwise")->value,
                                            lp.find("bias")->value, 1, 0);
                break;
            case LayerKind::BatchNorm:
                bn_forward(spec, lp, *cur, mode, lt);
                break;
            case LayerKind::ReLU:
                lt.output = kernels::relu(*cur);
                break;
            case LayerKind::MaxPool: {
                auto pooled = kernels::maxpool2d(*cur, spec.kernel, spec.stride);
                lt.output = std::move(pooled.output);
                lt.pool_argmax = std::move(pooled.argmax);
                break;
            }
            case LayerKind::GlobalAvgPool:
                lt.output = kernels::global_avg_pool(*cur);
                break;
            case LayerKind::Flatten: {
                int d = 1;
                for (int j = 1; j < cur->rank(); ++j) d *= cur->dim(j);
                lt.output = reshape(*cur, {cur->dim(0), d});
                break;
            }
            case LayerKind::Dense:
                lt.output = kernels::dense(*cur, lp.find("weight")->value, lp.find("bias")->value);
                break;
            case LayerKind::Dropout:
                if (mode == Mode::Train && spec.rate > 0.0f) {
                    if (rng == nullptr) {
                        throw ValueError("forward: train-mode dropout needs an rng");
                    }
                    const float keep = 1.0f - spec.rate;
                    lt.dropout_mask = Tensor(cur->shape());
                    lt.output = Tensor(cur->shape());
                    for (std::int64_t j = 0; j < cur->numel(); ++j) {
                        const float mv = rng->uniform() < keep ? 1.0f / keep : 0.0f;
                        lt.dropout_mask[j] = mv;
                        lt.output[j] = (*cur)[j] * mv;
                    }
                } else {
                    lt.output = *cur;
                }
                break;
            case LayerKind::ResidualAdd: {
                const int src = model.find_layer(spec.skip_source);
                const Tensor& skip = res.trace.layers[static_cast<size_t>(src)].output;
                if (!skip.same_shape(*cur)) throw ShapeError(spec.id + ": skip shape mismatch");
                lt.output = Tensor(cur->shape());
                for (std::int64_t j = 0; j < cur->numel(); ++j) {
                    lt.output[j] = (*cur)[j] + skip[j];
                }
                break;
            }
            case LayerKind::SoftmaxOutput:
                lt.output = kernels::softmax_rows(*cur);
                break;
        }
        cur = &lt.output;
    }

    res.probs = res.trace.layers.back().output;
    return res;
}

Gradients backward(const ModelGraph& model, const ParamStore& params, const ForwardTrace& trace,
                   const Tensor& grad_out, int seed_layer) {
    const int n_layers = static_cast<int>(model.layers.size());
    if (static_cast<int>(trace.layers.size()) != n_layers) {
        throw ShapeError("backward: trace does not match model");
    }
    const int seed = seed_layer < 0 ? n_layers - 1 : seed_layer;
    if (seed < 0 || seed >= n_layers) throw ValueError("backward: seed layer out of range");
    if (!grad_out.same_shape(trace.layers[static_cast<size_t>(seed)].output)) {
        throw ShapeError("backward: grad_out does not match seed layer output");
    }

    Gradients grads;
    grads.param_grads.resize(static_cast<size_t>(n_layers));
    grads.activation_grads.resize(static_cast<size_t>(n_layers));
    grads.activation_grads[static_cast<size_t>(seed)] = grad_out;

    Tensor input_grad_sink; // gradient w.r.t. the batch itself, discarded
    for (int i = seed; i >= 0; --i) {
        const Tensor& g = grads.activation_grads[static_cast<size_t>(i)];
        if (g.empty()) continue; // no path from this layer to the objective

        const LayerSpec& spec = model.layers[static_cast<size_t>(i)];
        const LayerParams& lp = params.layers[static_cast<size_t>(i)];
        const LayerTrace& lt = trace.layers[static_cast<size_t>(i)];
        const Tensor& x = i == 0 ? trace.input : trace.layers[static_cast<size_t>(i - 1)].output;
        Tensor& gin = i == 0 ? input_grad_sink : grads.activation_grads[static_cast<size_t>(i - 1)];
        const bool want_input = i > 0;

        switch (spec.kind) {
            case LayerKind::Conv: {
                const ParamTensor* wt = lp.find("weight");
                const bool want_params = wt->trainable;
                auto cg = kernels::conv2d_backward(x, wt->value, g, spec.stride, spec.padding,
                                                   want_input, want_params);
                if (want_input) add_into(gin, cg.input);
                if (want_params) {
                    grads.param_grads[static_cast<size_t>(i)].tensors.push_back(
                        {"weight", std::move(cg.kernel), true});
                    grads.param_grads[static_cast<size_t>(i)].tensors.push_back(
                        {"bias", std::move(cg.bias), true});
                }
                break;
            }
            case LayerKind::DepthwiseSeparableConv: {
                const ParamTensor* dw = lp.find("depthwise");
                const ParamTensor* pw = lp.find("pointwise");
                const bool want_params = dw->trainable;
                auto pg = kernels::conv2d_backward(lt.depthwise_out, pw->value, g, 1, 0,
                                                   true, want_params);
                auto dg = kernels::depthwise_conv2d_backward(x, dw->value, pg.input, spec.stride,
                                                             spec.padding, want_input, want_params);
                if (want_input) add_into(gin, dg.input);
                if (want_params) {
                    grads.param_grads[static_cast<size_t>(i)].tensors.push_back(
                        {"depthwise", std::move(dg.kernel), true});
                    grads.param_grads[static_cast<size_t>(i)].tensors.push_back(
                        {"pointwise", std::move(pg.kernel), true});
                    grads.param_grads[static_cast<size_t>(i)].tensors.push_back(
                        {"bias", std::move(pg.bias), true});
                }
                break;
            }
            case LayerKind::BatchNorm: {
                const bool want_params = lp.find("gamma")->trainable;
                auto bg = bn_backward(lp, x, lt, g, want_params);
                if (want_input) add_into(gin, bg.input);
                if (want_params) {
                    grads.param_grads[static_cast<size_t>(i)].tensors.push_back(
                        {"gamma", std::move(bg.gamma), true});
                    grads.param_grads[static_cast<size_t>(i)].tensors.push_back(
                        {"beta", std::move(bg.beta), true});
                }
                break;
            }
            case LayerKind::ReLU:
                if (want_input) add_into(gin, kernels::relu_backward(lt.output, g));
                break;
            case LayerKind::MaxPool:
                if (want_input) add_into(gin, kernels::maxpool2d_backward(x.shape(), lt.pool_argmax, g));
                break;
            case LayerKind::GlobalAvgPool:
                if (want_input) add_into(gin, kernels::global_avg_pool_backward(g, x.dim(2), x.dim(3)));
                break;
            case LayerKind::Flatten:
                if (want_input) add_into(gin, Tensor(x.shape(), g.values()));
                break;
            case LayerKind::Dense: {
                const ParamTensor* wt = lp.find("weight");
                const bool want_params = wt->trainable;
                auto dg = kernels::dense_backward(x, wt->value, g, want_input, want_params);
                if (want_input) add_into(gin, dg.input);
                if (want_params) {
                    grads.param_grads[static_cast<size_t>(i)].tensors.push_back(
                        {"weight", std::move(dg.weight), true});
                    grads.param_grads[static_cast<size_t>(i)].tensors.push_back(
                        {"bias", std::move(dg.bias), true});
                }
                break;
            }
            case LayerKind::Dropout:
                if (want_input) {
                    if (lt.dropout_mask.empty()) {
                        add_into(gin, g);
                    } else {
                        Tensor masked(g.shape());
                        for (std::int64_t j = 0; j < g.numel(); ++j) {
                            masked[j] = g[j] * lt.dropout_mask[j];
                        }
                        add_into(gin, masked);
                    }
                }
                break;
            case LayerKind::ResidualAdd: {
                const int src = model.find_layer(spec.skip_source);
                add_into(grads.activation_grads[static_cast<size_t>(src)], g);
                if (want_input) add_into(gin, g);
                break;
            }
            case LayerKind::SoftmaxOutput:
                if (want_input) add_into(gin, kernels::softmax_rows_backward(lt.output, g));
                break;
        }
    }
    return grads;
}

} // namespace cxr
