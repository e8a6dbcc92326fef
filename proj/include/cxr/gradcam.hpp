#ifndef CXR_GRADCAM_HPP
#define CXR_GRADCAM_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cxr/graph.hpp"
#include "cxr/tensor.hpp"

namespace cxr {

struct Heatmap {
    Tensor values{std::vector<int>{1}}; // [H,W], all in [0,1]
    std::string source_layer;
    int target_class = 0;
};

/// Full Grad-CAM: eval-mode traced forward, backward of the pre-softmax
/// target logit, channel weights = spatial gradient means, weighted channel
/// mean, ReLU, max-normalize, bilinear upsample to input size (then
/// renormalized so a nonzero map peaks at exactly 1).
/// layer_id empty = last conv-kind layer.
Heatmap grad_cam(const ModelGraph& model, ParamStore& params, const Tensor& image,
                 int target_class, const std::string& layer_id = "");

struct OverlayImage {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> rgb; // h*w*3 interleaved
};

/// 256-entry jet table lookup, warm = high.
std::array<std::uint8_t, 3> jet_color(float v);

/// Blends the jet-colored heatmap over the grayscale image:
/// pixel = (1-alpha)*gray + alpha*jet(heat). Image values must be in [0,1]
/// (callers divide raw-range tensors by 255 first).
OverlayImage overlay(const Tensor& image, const Heatmap& heatmap, float alpha,
                     const std::string& colormap = "jet");

struct ExplainItem {
    std::string filename;
    std::string true_label; // empty when unknown
    std::string pred_label;
    float confidence = 0.0f;
};

/// One overlay PNG per image plus manifest.csv (filename,true,pred,confidence).
/// Target class is the predicted class; truth labels are optional.
std::vector<ExplainItem> batch_explain(const ModelGraph& model, ParamStore& params,
                                       const Tensor& images, const std::vector<int>* true_labels,
                                       const std::filesystem::path& out_dir, float alpha = 0.5f,
                                       const std::string& layer_id = "");

} // namespace cxr

#endif
