#ifndef CXR_KERNELS_HPP
#define CXR_KERNELS_HPP

#include <cstdint>
#include <vector>

#include "cxr/tensor.hpp"

namespace cxr::kernels {

// All kernels are pure functions. Inputs and outputs are float32; reductions
// accumulate in double so results track the 64-bit reference oracles.

int conv_out_extent(int in, int k, int stride, int padding);

/// input [N,Cin,H,W], kernel [Cout,Cin,kh,kw], bias [Cout]. Zero padding.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int padding);

struct ConvGrads {
    Tensor input;   // empty if not requested
    Tensor kernel;  // empty if not requested
    Tensor bias;    // empty if not requested
};
ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_out,
                          int stride, int padding, bool want_input_grad, bool want_param_grads);

/// Per-channel spatial conv: input [N,C,H,W], kernel [C,1,kh,kw], no bias.
Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding);

struct DepthwiseGrads {
    Tensor input;
    Tensor kernel;
};
DepthwiseGrads depthwise_conv2d_backward(const Tensor& input, const Tensor& kernel,
                                         const Tensor& grad_out, int stride, int padding,
                                         bool want_input_grad, bool want_param_grads);

/// Depthwise stage followed by the 1x1 pointwise mix.
/// depthwise_kernel [Cin,1,kh,kw], pointwise_kernel [Cout,Cin,1,1], bias [Cout].
Tensor depthwise_separable_conv(const Tensor& input, const Tensor& depthwise_kernel,
                                const Tensor& pointwise_kernel, const Tensor& bias,
                                int stride, int padding);

struct MaxPoolResult {
    Tensor output;
    std::vector<std::int32_t> argmax; // flat input index per output element
};
MaxPoolResult maxpool2d(const Tensor& input, int window, int stride);
Tensor maxpool2d_backward(const std::vector<int>& input_shape,
                          const std::vector<std::int32_t>& argmax, const Tensor& grad_out);

/// [N,C,H,W] -> [N,C] per-channel spatial mean.
Tensor global_avg_pool(const Tensor& input);
Tensor global_avg_pool_backward(const Tensor& grad_out, int h, int w);

/// input [N,D] * weight [D,M] + bias [M] -> [N,M].
Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias);

struct DenseGrads {
    Tensor input;
    Tensor weight;
    Tensor bias;
};
DenseGrads dense_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                          bool want_input_grad, bool want_param_grads);

Tensor relu(const Tensor& input);
/// grad masked by the forward output (out > 0).
Tensor relu_backward(const Tensor& output, const Tensor& grad_out);

/// Row softmax with max subtraction; input [N,K].
Tensor softmax_rows(const Tensor& logits);
/// dL/dz given probs = softmax(z) and dL/dp.
Tensor softmax_rows_backward(const Tensor& probs, const Tensor& grad_out);

/// input [C,H,W] -> [C,outH,outW], half-pixel-center bilinear (align_corners=false).
Tensor bilinear_resize(const Tensor& input, int out_h, int out_w);

} // namespace cxr::kernels

#endif
