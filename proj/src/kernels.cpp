#include "cxr/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cxr::kernels {

namespace {

void require(bool cond, const char* msg) {
    if (!cond) throw ShapeError(msg);
}

} // namespace

int conv_out_extent(int in, int k, int stride, int padding) {
    return (in + 2 * padding - k) / stride + 1;
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              int stride, int padding) {
    require(input.rank() == 4, "conv2d: input must be [N,Cin,H,W]");
    require(kernel.rank() == 4, "conv2d: kernel must be [Cout,Cin,kh,kw]");
    require(bias.rank() == 1, "conv2d: bias must be [Cout]");
    if (stride <= 0) throw ValueError("conv2d: stride must be positive");
    if (padding < 0) throw ValueError("conv2d: padding must be non-negative");

    const int n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    require(kernel.dim(1) == cin, "conv2d: kernel Cin does not match input Cin");
    require(bias.dim(0) == cout, "conv2d: bias length does not match Cout");
    require(kh <= h + 2 * padding && kw <= w + 2 * padding,
            "conv2d: kernel exceeds padded input extent");

    const int oh = conv_out_extent(h, kh, stride, padding);
    const int ow = conv_out_extent(w, kw, stride, padding);
    Tensor out({n, cout, oh, ow});

    std::vector<double> acc(static_cast<size_t>(oh) * ow);
    for (int in_n = 0; in_n < n; ++in_n) {
        for (int co = 0; co < cout; ++co) {
            std::fill(acc.begin(), acc.end(), static_cast<double>(bias[co]));
            for (int ci = 0; ci < cin; ++ci) {
                const float* in_plane = input.data() +
                    ((static_cast<size_t>(in_n) * cin + ci) * h) * w;
                const float* k_plane = kernel.data() +
                    ((static_cast<size_t>(co) * cin + ci) * kh) * kw;
                for (int ky = 0; ky < kh; ++ky) {
                    for (int kx = 0; kx < kw; ++kx) {
                        const double kv = k_plane[ky * kw + kx];
                        for (int oy = 0; oy < oh; ++oy) {
                            const int iy = oy * stride - padding + ky;
                            if (iy < 0 || iy >= h) continue;
                            const float* in_row = in_plane + static_cast<size_t>(iy) * w;
                            double* acc_row = acc.data() + static_cast<size_t>(oy) * ow;
                            for (int ox = 0; ox < ow; ++ox) {
                                const int ix = ox * stride - padding + kx;
                                if (ix < 0 || ix >= w) continue;
                                acc_row[ox] += kv * in_row[ix];
                            }
                        }
                    }
                }
            }
            float* out_plane = out.data() + ((static_cast<size_t>(in_n) * cout + co) * oh) * ow;
            for (size_t i = 0; i < acc.size(); ++i) out_plane[i] = static_cast<float>(acc[i]);
        }
    }
    return out;
}

ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_out,
                          int stride, int padding, bool want_input_grad, bool want_param_grads) {
    const int n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
    const int oh = grad_out.dim(2), ow = grad_out.dim(3);
    require(grad_out.dim(0) == n && grad_out.dim(1) == cout,
            "conv2d_backward: grad_out shape mismatch");

    ConvGrads grads;
    std::vector<double> gin_acc;
    std::vector<double> gk_acc;
    std::vector<double> gb_acc;
    if (want_input_grad) gin_acc.assign(static_cast<size_t>(input.numel()), 0.0);
    if (want_param_grads) {
        gk_acc.assign(static_cast<size_t>(kernel.numel()), 0.0);
        gb_acc.assign(static_cast<size_t>(cout), 0.0);
    }

    for (int in_n = 0; in_n < n; ++in_n) {
        for (int co = 0; co < cout; ++co) {
            const float* go_plane = grad_out.data() +
                ((static_cast<size_t>(in_n) * cout + co) * oh) * ow;
            if (want_param_grads) {
                double s = 0.0;
                for (int i = 0; i < oh * ow; ++i) s += go_plane[i];
                gb_acc[static_cast<size_t>(co)] += s;
            }
            for (int ci = 0; ci < cin; ++ci) {
                const float* in_plane = input.data() +
                    ((static_cast<size_t>(in_n) * cin + ci) * h) * w;
                const float* k_plane = kernel.data() +
                    ((static_cast<size_t>(co) * cin + ci) * kh) * kw;
                double* gin_plane = want_input_grad
                    ? gin_acc.data() + ((static_cast<size_t>(in_n) * cin + ci) * h) * w
                    : nullptr;
                double* gk_plane = want_param_grads
                    ? gk_acc.data() + ((static_cast<size_t>(co) * cin + ci) * kh) * kw
                    : nullptr;
                for (int ky = 0; ky < kh; ++ky) {
                    for (int kx = 0; kx < kw; ++kx) {
                        const double kv = k_plane[ky * kw + kx];
                        double gk = 0.0;
                        for (int oy = 0; oy < oh; ++oy) {
                            const int iy = oy * stride - padding + ky;
                            if (iy < 0 || iy >= h) continue;
                            const float* go_row = go_plane + static_cast<size_t>(oy) * ow;
                            const float* in_row = in_plane + static_cast<size_t>(iy) * w;
                            double* gin_row = want_input_grad
                                ? gin_plane + static_cast<size_t>(iy) * w : nullptr;
                            for (int ox = 0; ox < ow; ++ox) {
                                const int ix = ox * stride - padding + kx;
                                if (ix < 0 || ix >= w) continue;
                                const double g = go_row[ox];
                                if (want_param_grads) gk += g * in_row[ix];
                                if (want_input_grad) gin_row[ix] += g * kv;
                            }
                        }
                        if (want_param_grads) gk_plane[ky * kw + kx] += gk;
                    }
                }
            }
        }
    }

    if (want_input_grad) {
        grads.input = Tensor(input.shape());
        for (std::int64_t i = 0; i < grads.input.numel(); ++i) {
            grads.input[i] = static_cast<float>(gin_acc[static_cast<size_t>(i)]);
        }
    }
    if (want_param_grads) {
        grads.kernel = Tensor(kernel.shape());
        for (std::int64_t i = 0; i < grads.kernel.numel(); ++i) {
            grads.kernel[i] = static_cast<float>(gk_acc[static_cast<size_t>(i)]);
        }
        grads.bias = Tensor({cout});
        for (int i = 0; i < cout; ++i) grads.bias[i] = static_cast<float>(gb_acc[static_cast<size_t>(i)]);
    }
    return grads;
}

Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
    require(input.rank() == 4, "depthwise_conv2d: input must be [N,C,H,W]");
    require(kernel.rank() == 4 && kernel.dim(1) == 1,
            "depthwise_conv2d: kernel must be [C,1,kh,kw]");
    require(kernel.dim(0) == input.dim(1),
            "depthwise_conv2d: kernel channel count does not match input");
    if (stride <= 0) throw ValueError("depthwise_conv2d: stride must be positive");
    if (padding < 0) throw ValueError("depthwise_conv2d: padding must be non-negative");

    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int kh = kernel.dim(2), kw = kernel.dim(3);
    require(kh <= h + 2 * padding && kw <= w + 2 * padding,
            "depthwise_conv2d: kernel exceeds padded input extent");
    const int oh = conv_out_extent(h, kh, stride, padding);
    const int ow = conv_out_extent(w, kw, stride, padding);
    Tensor out({n, c, oh, ow});

    std::vector<double> acc(static_cast<size_t>(oh) * ow);
    for (int in_n = 0; in_n < n; ++in_n) {
        for (int ci = 0; ci < c; ++ci) {
            std::fill(acc.begin(), acc.end(), 0.0);
            const float* in_plane = input.data() + ((static_cast<size_t>(in_n) * c + ci) * h) * w;
            const float* k_plane = kernel.data() + (static_cast<size_t>(ci) * kh) * kw;
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    const double kv = k_plane[ky * kw + kx];
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride - padding + ky;
                        if (iy < 0 || iy >= h) continue;
                        const float* in_row = in_plane + static_cast<size_t>(iy) * w;
                        double* acc_row = acc.data() + static_cast<size_t>(oy) * ow;
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride - padding + kx;
                            if (ix < 0 || ix >= w) continue;
                            acc_row[ox] += kv * in_row[ix];
                        }
                    }
                }
            }
            float* out_plane = out.data() + ((static_cast<size_t>(in_n) * c + ci) * oh) * ow;
            for (size_t i = 0; i < acc.size(); ++i) out_plane[i] = static_cast<float>(acc[i]);
        }
    }
    return out;
}

DepthwiseGrads depthwise_conv2d_backward(const Tensor& input, const Tensor& kernel,
                                         const Tensor& grad_out, int stride, int padding,
                                         bool want_input_grad, bool want_param_grads) {
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    const int kh = kernel.dim(2), kw = kernel.dim(3);
    const int oh = grad_out.dim(2), ow = grad_out.dim(3);
    require(grad_out.dim(0) == n && grad_out.dim(1) == c,
            "depthwise_conv2d_backward: grad_out shape mismatch");

    DepthwiseGrads grads;
    std::vector<double> gin_acc;
    std::vector<double> gk_acc;
    if (want_input_grad) gin_acc.assign(static_cast<size_t>(input.numel()), 0.0);
    if (want_param_grads) gk_acc.assign(static_cast<size_t>(kernel.numel()), 0.0);

    for (int in_n = 0; in_n < n; ++in_n) {
        for (int ci = 0; ci < c; ++ci) {
            const float* go_plane = grad_out.data() +
                ((static_cast<size_t>(in_n) * c + ci) * oh) * ow;
            const float* in_plane = input.data() +
                ((static_cast<size_t>(in_n) * c + ci) * h) * w;
            const float* k_plane = kernel.data() + (static_cast<size_t>(ci) * kh) * kw;
            double* gin_plane = want_input_grad
                ? gin_acc.data() + ((static_cast<size_t>(in_n) * c + ci) * h) * w : nullptr;
            double* gk_plane = want_param_grads
                ? gk_acc.data() + (static_cast<size_t>(ci) * kh) * kw : nullptr;
            for (int ky = 0; ky < kh; ++ky) {
                for (int kx = 0; kx < kw; ++kx) {
                    const double kv = k_plane[ky * kw + kx];
                    double gk = 0.0;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride - padding + ky;
                        if (iy < 0 || iy >= h) continue;
                        const float* go_row = go_plane + static_cast<size_t>(oy) * ow;
                        const float* in_row = in_plane + static_cast<size_t>(iy) * w;
                        double* gin_row = want_input_grad
                            ? gin_plane + static_cast<size_t>(iy) * w : nullptr;
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride - padding + kx;
                            if (ix < 0 || ix >= w) continue;
                            const double g = go_row[ox];
                            if (want_param_grads) gk += g * in_row[ix];
                            if (want_input_grad) gin_row[ix] += g * kv;
                        }
                    }
                    if (want_param_grads) gk_plane[ky * kw + kx] += gk;
                }
            }
        }
    }

    if (want_input_grad) {
        grads.input = Tensor(input.shape());
        for (std::int64_t i = 0; i < grads.input.numel(); ++i) {
            grads.input[i] = static_cast<float>(gin_acc[static_cast<size_t>(i)]);
        }
    }
    if (want_param_grads) {
        grads.kernel = Tensor(kernel.shape());
        for (std::int64_t i = 0; i < grads.kernel.numel(); ++i) {
            grads.kernel[i] = static_cast<float>(gk_acc[static_cast<size_t>(i)]);
        }
    }
    return grads;
}

Tensor depthwise_separable_conv(const Tensor& input, const Tensor& depthwise_kernel,
                                const Tensor& pointwise_kernel, const Tensor& bias,
                                int stride, int padding) {
    require(pointwise_kernel.rank() == 4 && pointwise_kernel.dim(2) == 1 &&
                pointwise_kernel.dim(3) == 1,
            "depthwise_separable_conv: pointwise kernel must be [Cout,Cin,1,1]");
    require(pointwise_kernel.dim(1) == input.dim(1),
            "depthwise_separable_conv: pointwise Cin does not match input");
    Tensor mid = depthwise_conv2d(input, depthwise_kernel, stride, padding);
    return conv2d(mid, pointwise_kernel, bias, 1, 0);
}

MaxPoolResult maxpool2d(const Tensor& input, int window, int stride) {
    require(input.rank() == 4, "maxpool2d: input must be [N,C,H,W]");
    if (window <= 0 || stride <= 0) throw ValueError("maxpool2d: window and stride must be positive");
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    require(window <= h && window <= w, "maxpool2d: window exceeds spatial extent");
    const int oh = (h - window) / stride + 1;
    const int ow = (w - window) / stride + 1;

    MaxPoolResult res;
    res.output = Tensor({n, c, oh, ow});
    res.argmax.assign(static_cast<size_t>(res.output.numel()), 0);

    std::int64_t out_idx = 0;
    for (int in_n = 0; in_n < n; ++in_n) {
        for (int ci = 0; ci < c; ++ci) {
            const std::size_t plane_off = ((static_cast<size_t>(in_n) * c + ci) * h) * w;
            const float* in_plane = input.data() + plane_off;
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    float best = -std::numeric_limits<float>::infinity();
                    int best_idx = 0;
                    for (int ky = 0; ky < window; ++ky) {
                        const int iy = oy * stride + ky;
                        for (int kx = 0; kx < window; ++kx) {
                            const int ix = ox * stride + kx;
                            const float v = in_plane[static_cast<size_t>(iy) * w + ix];
                            if (v > best) { // first max wins on ties
                                best = v;
                                best_idx = iy * w + ix;
                            }
                        }
                    }
                    res.output[out_idx] = best;
                    res.argmax[static_cast<size_t>(out_idx)] =
                        static_cast<std::int32_t>(plane_off) + best_idx;
                    ++out_idx;
                }
            }
        }
    }
    return res;
}

Tensor maxpool2d_backward(const std::vector<int>& input_shape,
                          const std::vector<std::int32_t>& argmax, const Tensor& grad_out) {
    Tensor grad_in(input_shape);
    require(static_cast<std::int64_t>(argmax.size()) == grad_out.numel(),
            "maxpool2d_backward: argmax/grad_out mismatch");
    for (std::int64_t i = 0; i < grad_out.numel(); ++i) {
        grad_in[argmax[static_cast<size_t>(i)]] += grad_out[i];
    }
    return grad_in;
}

Tensor global_avg_pool(const Tensor& input) {
    require(input.rank() == 4, "global_avg_pool: input must be [N,C,H,W]");
    const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
    Tensor out({n, c});
    const double inv = 1.0 / (static_cast<double>(h) * w);
    for (int in_n = 0; in_n < n; ++in_n) {
        for (int ci = 0; ci < c; ++ci) {
            const float* plane = input.data() + ((static_cast<size_t>(in_n) * c + ci) * h) * w;
            double s = 0.0;
            for (int i = 0; i < h * w; ++i) s += plane[i];
            out.at2(in_n, ci) = static_cast<float>(s * inv);
        }
    }
    return out;
}

Tensor global_avg_pool_backward(const Tensor& grad_out, int h, int w) {
    const int n = grad_out.dim(0), c = grad_out.dim(1);
    Tensor grad_in({n, c, h, w});
    const double inv = 1.0 / (static_cast<double>(h) * w);
    for (int in_n = 0; in_n < n; ++in_n) {
        for (int ci = 0; ci < c; ++ci) {
            const float g = static_cast<float>(grad_out.at2(in_n, ci) * inv);
            float* plane = grad_in.data() + ((static_cast<size_t>(in_n) * c + ci) * h) * w;
            for (int i = 0; i < h * w; ++i) plane[i] = g;
        }
    }
    return grad_in;
}

Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    require(input.rank() == 2, "dense: input must be [N,D]");
    require(weight.rank() == 2, "dense: weight must be [D,M]");
    require(input.dim(1) == weight.dim(0), "dense: inner extents do not match");
    require(bias.rank() == 1 && bias.dim(0) == weight.dim(1),
            "dense: bias length does not match M");
    const int n = input.dim(0), d = input.dim(1), m = weight.dim(1);
    Tensor out({n, m});
    for (int i = 0; i < n; ++i) {
        const float* x = input.data() + static_cast<size_t>(i) * d;
        for (int j = 0; j < m; ++j) {
            double acc = bias[j];
            const float* wcol = weight.data() + j;
            for (int k = 0; k < d; ++k) acc += static_cast<double>(x[k]) * wcol[static_cast<size_t>(k) * m];
            out.at2(i, j) = static_cast<float>(acc);
        }
    }
    return out;
}

DenseGrads dense_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                          bool want_input_grad, bool want_param_grads) {
    const int n = input.dim(0), d = input.dim(1), m = weight.dim(1);
    require(grad_out.dim(0) == n && grad_out.dim(1) == m, "dense_backward: grad_out mismatch");
    DenseGrads grads;
    if (want_input_grad) {
        grads.input = Tensor({n, d});
        for (int i = 0; i < n; ++i) {
            const float* g = grad_out.data() + static_cast<size_t>(i) * m;
            for (int k = 0; k < d; ++k) {
                double acc = 0.0;
                const float* wrow = weight.data() + static_cast<size_t>(k) * m;
                for (int j = 0; j < m; ++j) acc += static_cast<double>(g[j]) * wrow[j];
                grads.input.at2(i, k) = static_cast<float>(acc);
            }
        }
    }
    if (want_param_grads) {
        grads.weight = Tensor({d, m});
        grads.bias = Tensor({m});
        std::vector<double> gw(static_cast<size_t>(d) * m, 0.0);
        std::vector<double> gb(static_cast<size_t>(m), 0.0);
        for (int i = 0; i < n; ++i) {
            const float* x = input.data() + static_cast<size_t>(i) * d;
            const float* g = grad_out.data() + static_cast<size_t>(i) * m;
            for (int j = 0; j < m; ++j) gb[static_cast<size_t>(j)] += g[j];
            for (int k = 0; k < d; ++k) {
                const double xv = x[k];
                double* gw_row = gw.data() + static_cast<size_t>(k) * m;
                for (int j = 0; j < m; ++j) gw_row[j] += xv * g[j];
            }
        }
        for (std::int64_t i = 0; i < grads.weight.numel(); ++i) {
            grads.weight[i] = static_cast<float>(gw[static_cast<size_t>(i)]);
        }
        for (int j = 0; j < m; ++j) grads.bias[j] = static_cast<float>(gb[static_cast<size_t>(j)]);
    }
    return grads;
}

Tensor relu(const Tensor& input) {
    Tensor out(input.shape());
    for (std::int64_t i = 0; i < input.numel(); ++i) out[i] = input[i] > 0.0f ? input[i] : 0.0f;
    return out;
}

Tensor relu_backward(const Tensor& output, const Tensor& grad_out) {
    require(output.same_shape(grad_out), "relu_backward: shape mismatch");
    Tensor grad_in(output.shape());
    for (std::int64_t i = 0; i < output.numel(); ++i) {
        grad_in[i] = output[i] > 0.0f ? grad_out[i] : 0.0f;
    }
    return grad_in;
}

Tensor softmax_rows(const Tensor& logits) {
    require(logits.rank() == 2, "softmax_rows: input must be [N,K]");
    const int n = logits.dim(0), k = logits.dim(1);
    Tensor out({n, k});
    for (int i = 0; i < n; ++i) {
        const float* z = logits.data() + static_cast<size_t>(i) * k;
        float* p = out.data() + static_cast<size_t>(i) * k;
        double zmax = z[0];
        for (int j = 1; j < k; ++j) zmax = std::max(zmax, static_cast<double>(z[j]));
        double denom = 0.0;
        for (int j = 0; j < k; ++j) denom += std::exp(static_cast<double>(z[j]) - zmax);
        for (int j = 0; j < k; ++j) {
            p[j] = static_cast<float>(std::exp(static_cast<double>(z[j]) - zmax) / denom);
        }
    }
    return out;
}

Tensor softmax_rows_backward(const Tensor& probs, const Tensor& grad_out) {
    require(probs.same_shape(grad_out), "softmax_rows_backward: shape mismatch");
    const int n = probs.dim(0), k = probs.dim(1);
    Tensor grad_in({n, k});
    for (int i = 0; i < n; ++i) {
        const float* p = probs.data() + static_cast<size_t>(i) * k;
        const float* g = grad_out.data() + static_cast<size_t>(i) * k;
        double dot = 0.0;
        for (int j = 0; j < k; ++j) dot += static_cast<double>(g[j]) * p[j];
        for (int j = 0; j < k; ++j) {
            grad_in.at2(i, j) = static_cast<float>(p[j] * (g[j] - dot));
        }
    }
    return grad_in;
}

Tensor bilinear_resize(const Tensor& input, int out_h, int out_w) {
    require(input.rank() == 3, "bilinear_resize: input must be [C,H,W]");
    if (out_h <= 0 || out_w <= 0) throw ValueError("bilinear_resize: target extents must be positive");
    const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
    Tensor out({c, out_h, out_w});

    const double sy = static_cast<double>(h) / out_h;
    const double sx = static_cast<double>(w) / out_w;
    for (int oy = 0; oy < out_h; ++oy) {
        const double fy = (oy + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        const double dy = fy - y0;
        const int y0c = std::clamp(y0, 0, h - 1);
        const int y1c = std::clamp(y0 + 1, 0, h - 1);
        for (int ox = 0; ox < out_w; ++ox) {
            const double fx = (ox + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            const double dx = fx - x0;
            const int x0c = std::clamp(x0, 0, w - 1);
            const int x1c = std::clamp(x0 + 1, 0, w - 1);
            for (int ci = 0; ci < c; ++ci) {
                const double v00 = input.at3(ci, y0c, x0c);
                const double v01 = input.at3(ci, y0c, x1c);
                const double v10 = input.at3(ci, y1c, x0c);
                const double v11 = input.at3(ci, y1c, x1c);
                const double top = v00 + (v01 - v00) * dx;
                const double bot = v10 + (v11 - v10) * dx;
                out.at3(ci, oy, ox) = static_cast<float>(top + (bot - top) * dy);
            }
        }
    }
    return out;
}

} // namespace cxr::kernels
