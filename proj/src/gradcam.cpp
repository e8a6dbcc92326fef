#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "cxr/errors.hpp"
#include "cxr/gradcam.hpp"
#include "cxr/image_codec.hpp"
#include "cxr/kernels.hpp"
#include "cxr/metrics.hpp"

namespace cxr {

namespace {

bool conv_kind(LayerKind k) {
    return k == LayerKind::Conv || k == LayerKind::DepthwiseSeparableConv;
}

const std::array<std::array<std::uint8_t, 3>, 256>& jet_table() {
    static const auto table = [] {
        std::array<std::array<std::uint8_t, 3>, 256> t{};
        for (int i = 0; i < 256; ++i) {
            const double v = i / 255.0;
            const auto ch = [](double x) { return std::clamp(x, 0.0, 1.0); };
            t[static_cast<size_t>(i)] = {
                static_cast<std::uint8_t>(std::lround(255.0 * ch(1.5 - std::fabs(4.0 * v - 3.0)))),
                static_cast<std::uint8_t>(std::lround(255.0 * ch(1.5 - std::fabs(4.0 * v - 2.0)))),
                static_cast<std::uint8_t>(std::lround(255.0 * ch(1.5 - std::fabs(4.0 * v - 1.0)))),
            };
        }
        return t;
    }();
    return table;
}

Tensor slice_image(const Tensor& images, int i) {
    Tensor out({1, images.dim(1), images.dim(2), images.dim(3)});
    const std::int64_t row = out.numel();
    std::copy(images.data() + static_cast<std::int64_t>(i) * row,
              images.data() + static_cast<std::int64_t>(i + 1) * row, out.data());
    return out;
}

} // namespace

Heatmap grad_cam(const ModelGraph& model, ParamStore& params, const Tensor& image,
                 int target_class, const std::string& layer_id) {
    if (image.rank() != 4 || image.dim(0) != 1) {
        throw ShapeError("grad_cam: image must be [1,C,H,W]");
    }
    if (target_class < 0 || target_class >= model.num_classes) {
        throw ValueError("grad_cam: target class " + std::to_string(target_class) +
                         " outside [0," + std::to_string(model.num_classes) + ")");
    }
    int layer = layer_id.empty() ? model.last_conv_layer() : model.find_layer(layer_id);
    if (layer < 0) {
        throw ValueError(layer_id.empty() ? "grad_cam: model has no conv layer"
                                          : "grad_cam: no layer named " + layer_id);
    }
    if (!conv_kind(model.layers[static_cast<size_t>(layer)].kind)) {
        throw ValueError("grad_cam: layer " + model.layers[static_cast<size_t>(layer)].id +
                         " is not a conv layer");
    }

    ForwardResult fr = forward(model, params, image, Mode::Eval);
    const int pre_softmax = static_cast<int>(model.layers.size()) - 2;
    Tensor seed({1, model.num_classes});
    seed.at2(0, target_class) = 1.0f;
    Gradients grads = backward(model, params, fr.trace, seed, pre_softmax);

    const Tensor& a = fr.trace.layers[static_cast<size_t>(layer)].output;   // [1,C,h,w]
    const Tensor& g = grads.activation_grads[static_cast<size_t>(layer)];
    const int c = a.dim(1), h = a.dim(2), w = a.dim(3);

    std::vector<double> wc(static_cast<size_t>(c), 0.0);
    for (int ci = 0; ci < c; ++ci) {
        double sum = 0.0;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) sum += g.at4(0, ci, y, x);
        }
        wc[static_cast<size_t>(ci)] = sum / (static_cast<double>(h) * w);
    }

    Tensor map({1, h, w});
    double max_v = 0.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double m = 0.0;
            for (int ci = 0; ci < c; ++ci) m += wc[static_cast<size_t>(ci)] * a.at4(0, ci, y, x);
            m = std::max(m / c, 0.0); // channel mean, then ReLU
            map.at3(0, y, x) = static_cast<float>(m);
            max_v = std::max(max_v, m);
        }
    }
    if (max_v > 0.0) {
        for (std::int64_t e = 0; e < map.numel(); ++e) {
            map.data()[e] = static_cast<float>(map.data()[e] / max_v);
        }
    }

    Tensor up = kernels::bilinear_resize(map, image.dim(2), image.dim(3));
    float up_max = 0.0f;
    for (std::int64_t e = 0; e < up.numel(); ++e) up_max = std::max(up_max, up.data()[e]);
    if (up_max > 0.0f) {
        for (std::int64_t e = 0; e < up.numel(); ++e) up.data()[e] /= up_max;
    }

    Heatmap hm;
    hm.values = Tensor({image.dim(2), image.dim(3)}, std::vector<float>(up.values()));
    hm.source_layer = model.layers[static_cast<size_t>(layer)].id;
    hm.target_class = target_class;
    return hm;
}

std::array<std::uint8_t, 3> jet_color(float v) {
    const int idx = static_cast<int>(std::clamp(std::lround(v * 255.0f), 0L, 255L));
    return jet_table()[static_cast<size_t>(idx)];
}

OverlayImage overlay(const Tensor& image, const Heatmap& heatmap, float alpha,
                     const std::string& colormap) {
    if (alpha < 0.0f || alpha > 1.0f) throw ValueError("overlay: alpha must lie in [0,1]");
    if (colormap != "jet") throw ValueError("overlay: unknown colormap " + colormap);
    if (image.rank() != 3) throw ShapeError("overlay: image must be [C,H,W]");
    const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
    if (heatmap.values.rank() != 2 || heatmap.values.dim(0) != h || heatmap.values.dim(1) != w) {
        throw ShapeError("overlay: heatmap dims do not match image");
    }

    OverlayImage out;
    out.h = h;
    out.w = w;
    out.rgb.resize(static_cast<size_t>(h) * static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double gray = 0.0;
            for (int ci = 0; ci < c; ++ci) gray += image.at3(ci, y, x);
            gray = std::clamp(gray / c, 0.0, 1.0) * 255.0;
            const auto warm = jet_color(heatmap.values.at2(y, x));
            const size_t o = (static_cast<size_t>(y) * static_cast<size_t>(w) + static_cast<size_t>(x)) * 3;
            for (int ch = 0; ch < 3; ++ch) {
                const double v = (1.0 - alpha) * gray + alpha * warm[static_cast<size_t>(ch)];
                out.rgb[o + static_cast<size_t>(ch)] =
                    static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
        }
    }
    return out;
}

std::vector<ExplainItem> batch_explain(const ModelGraph& model, ParamStore& params,
                                       const Tensor& images, const std::vector<int>* true_labels,
                                       const std::filesystem::path& out_dir, float alpha,
                                       const std::string& layer_id) {
    if (images.rank() != 4) throw ShapeError("batch_explain: images must be [N,C,H,W]");
    const int n = images.dim(0);
    if (true_labels && static_cast<int>(true_labels->size()) != n) {
        throw ValueError("batch_explain: label count does not match images");
    }
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec || !std::filesystem::is_directory(out_dir)) {
        throw ConfigError("batch_explain: cannot create output dir " + out_dir.string());
    }

    ForwardResult fr = forward(model, params, images, Mode::Eval);
    const float scale = model.preprocess.range == PreprocessSpec::Range::Raw255 ? 255.0f : 1.0f;

    std::vector<ExplainItem> items;
    std::string manifest = "filename,true,pred,confidence\n";
    for (int i = 0; i < n; ++i) {
        const int pred = argmax_row(fr.probs, i);
        const float conf = fr.probs.at2(i, pred);
        Tensor one = slice_image(images, i);
        Heatmap hm = grad_cam(model, params, one, pred, layer_id);

        Tensor chw({one.dim(1), one.dim(2), one.dim(3)}, std::vector<float>(one.values()));
        if (scale != 1.0f) {
            for (std::int64_t e = 0; e < chw.numel(); ++e) chw.data()[e] /= scale;
        }
        OverlayImage img = overlay(chw, hm, alpha);

        ExplainItem item;
        item.pred_label = model.class_names[static_cast<size_t>(pred)];
        item.confidence = conf;
        if (true_labels) {
            item.true_label = model.class_names[static_cast<size_t>((*true_labels)[static_cast<size_t>(i)])];
        }
        char buf[192];
        if (true_labels) {
            std::snprintf(buf, sizeof(buf), "%03d_true-%s_pred-%s_%.2f.png", i,
                          item.true_label.c_str(), item.pred_label.c_str(), conf);
        } else {
            std::snprintf(buf, sizeof(buf), "%03d_pred-%s_%.2f.png", i, item.pred_label.c_str(),
                          conf);
        }
        item.filename = buf;
        write_png_rgb(out_dir / item.filename, img.h, img.w, img.rgb);

        std::snprintf(buf, sizeof(buf), "%s,%s,%s,%.4f\n", item.filename.c_str(),
                      item.true_label.c_str(), item.pred_label.c_str(), conf);
        manifest += buf;
        items.push_back(std::move(item));
    }

    std::ofstream mf(out_dir / "manifest.csv", std::ios::binary | std::ios::trunc);
    if (!mf) throw Error("batch_explain: cannot write manifest.csv");
    mf.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
    if (!mf.flush()) throw Error("batch_explain: manifest write failed");
    return items;
}

} // namespace cxr
