#include "cilbench/model_graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace cilbench {

const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Input: return "input";
        case LayerKind::Conv: return "conv";
        case LayerKind::BatchNorm: return "batchnorm";
        case LayerKind::Linear: return "linear";
        case LayerKind::ReLU: return "relu";
        case LayerKind::ReLU6: return "relu6";
        case LayerKind::AvgPool: return "avgpool";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::GlobalAvgPool: return "gap";
        case LayerKind::Add: return "add";
        case LayerKind::Flatten: return "flatten";
    }
    return "?";
}

LayerKind parse_layer_kind(const std::string& s) {
    static const std::pair<const char*, LayerKind> table[] = {
        {"input", LayerKind::Input},   {"conv", LayerKind::Conv},
        {"batchnorm", LayerKind::BatchNorm}, {"linear", LayerKind::Linear},
        {"relu", LayerKind::ReLU},     {"relu6", LayerKind::ReLU6},
        {"avgpool", LayerKind::AvgPool}, {"maxpool", LayerKind::MaxPool},
        {"gap", LayerKind::GlobalAvgPool}, {"add", LayerKind::Add},
        {"flatten", LayerKind::Flatten},
    };
    for (const auto& [name, kind] : table)
        if (s == name) return kind;
    throw IoError("unknown layer kind '" + s + "'");
}

size_t BNScaleView::prunable_count() const {
    size_t n = 0;
    for (const auto& e : entries)
        if (e.prunable) ++n;
    return n;
}

namespace {

int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// Expands (C,H,W) into a (C*kh*kw) x (Hout*Wout) patch matrix, rows ordered
// by (channel, ky, kx). Out-of-bounds taps read as zero.
void im2col(const double* src, int C, int H, int W, int kh, int kw, int stride, int pad,
            int Hout, int Wout, double* col) {
    double* out = col;
    for (int c = 0; c < C; ++c) {
        const double* plane = src + static_cast<size_t>(c) * H * W;
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                for (int oy = 0; oy < Hout; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) {
                        std::fill(out, out + Wout, 0.0);
                        out += Wout;
                        continue;
                    }
                    const double* row = plane + static_cast<size_t>(iy) * W;
                    for (int ox = 0; ox < Wout; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        *out++ = (ix >= 0 && ix < W) ? row[ix] : 0.0;
                    }
                }
            }
        }
    }
}

// Accumulates a patch-matrix gradient back onto the (C,H,W) image.
void col2im_acc(const double* col, int C, int H, int W, int kh, int kw, int stride, int pad,
                int Hout, int Wout, double* dst) {
    const double* in = col;
    for (int c = 0; c < C; ++c) {
        double* plane = dst + static_cast<size_t>(c) * H * W;
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                for (int oy = 0; oy < Hout; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) {
                        in += Wout;
                        continue;
                    }
                    double* row = plane + static_cast<size_t>(iy) * W;
                    for (int ox = 0; ox < Wout; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < W) row[ix] += *in;
                        ++in;
                    }
                }
            }
        }
    }
}

bool is_depthwise(const Layer& l) {
    return l.kind == LayerKind::Conv && l.groups > 1 && l.groups == l.in_ch && l.groups == l.out_ch;
}

// Layers through which a channel-drop decision propagates unchanged:
// per-channel ops and depthwise convolution.
bool mask_preserving(const Layer& l) {
    switch (l.kind) {
        case LayerKind::ReLU:
        case LayerKind::ReLU6:
        case LayerKind::AvgPool:
        case LayerKind::MaxPool:
        case LayerKind::GlobalAvgPool:
        case LayerKind::BatchNorm:
            return true;
        case LayerKind::Conv:
            return is_depthwise(l);
        default:
            return false;
    }
}

}  // namespace

int ModelGraph::feature_dim() const {
    if (feature_index < 0) throw ShapeError("model has no feature layer");
    auto shapes = layer_shapes(input_size);
    return shapes[static_cast<size_t>(feature_index)][0];
}

int ModelGraph::slot_of(int global_class) const {
    for (size_t i = 0; i < seen_classes.size(); ++i)
        if (seen_classes[i] == global_class) return static_cast<int>(i);
    return -1;
}

std::vector<std::array<int, 3>> ModelGraph::layer_shapes(int in_size) const {
    std::vector<std::array<int, 3>> shapes(layers.size(), {0, 0, 0});
    for (size_t i = 0; i < layers.size(); ++i) {
        const Layer& l = layers[i];
        auto in = (l.input >= 0) ? shapes[static_cast<size_t>(l.input)] : std::array<int, 3>{0, 0, 0};
        switch (l.kind) {
            case LayerKind::Input:
                shapes[i] = {input_channels, in_size, in_size};
                break;
            case LayerKind::Conv:
                if (in[0] != l.in_ch)
                    throw ShapeError("layer " + l.name + ": expected " + std::to_string(l.in_ch) +
                                     " input channels, got " + std::to_string(in[0]));
                shapes[i] = {l.out_ch, conv_out_dim(in[1], l.kh, l.stride, l.pad),
                             conv_out_dim(in[2], l.kw, l.stride, l.pad)};
                break;
            case LayerKind::BatchNorm:
            case LayerKind::ReLU:
            case LayerKind::ReLU6:
                shapes[i] = in;
                break;
            case LayerKind::AvgPool:
            case LayerKind::MaxPool:
                shapes[i] = {in[0], (in[1] - l.pool_k) / l.pool_stride + 1,
                             (in[2] - l.pool_k) / l.pool_stride + 1};
                break;
            case LayerKind::GlobalAvgPool:
                shapes[i] = {in[0], 1, 1};
                break;
            case LayerKind::Add: {
                auto in2 = shapes[static_cast<size_t>(l.input2)];
                if (in != in2)
                    throw ShapeError("layer " + l.name + ": add operands disagree");
                shapes[i] = in;
                break;
            }
            case LayerKind::Flatten:
                shapes[i] = {in[0] * in[1] * in[2], 1, 1};
                break;
            case LayerKind::Linear:
                if (in[0] != l.in_ch)
                    throw ShapeError("layer " + l.name + ": expected " + std::to_string(l.in_ch) +
                                     " input features, got " + std::to_string(in[0]));
                shapes[i] = {l.out_ch, 1, 1};
                break;
        }
    }
    return shapes;
}

namespace {

void forward_conv(const Layer& l, const Tensor& x, Tensor& y, Tensor& scratch) {
    const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int Hout = conv_out_dim(H, l.kh, l.stride, l.pad);
    const int Wout = conv_out_dim(W, l.kw, l.stride, l.pad);
    const int hw = Hout * Wout;
    const int cin_g = l.in_ch / l.groups;
    const int cout_g = l.out_ch / l.groups;
    const int krows = cin_g * l.kh * l.kw;
    y.resize({N, l.out_ch, Hout, Wout});

    const bool unit = (l.kh == 1 && l.kw == 1 && l.stride == 1 && l.pad == 0);
    if (!unit) scratch.resize({C * l.kh * l.kw, hw});

    for (int n = 0; n < N; ++n) {
        const double* xn = x.ptr() + static_cast<size_t>(n) * C * H * W;
        double* yn = y.ptr() + static_cast<size_t>(n) * l.out_ch * hw;
        const double* col = xn;
        if (!unit) {
            im2col(xn, C, H, W, l.kh, l.kw, l.stride, l.pad, Hout, Wout, scratch.ptr());
            col = scratch.ptr();
        }
        for (int g = 0; g < l.groups; ++g) {
            gemm_acc(l.weight.ptr() + static_cast<size_t>(g) * cout_g * krows,
                     col + static_cast<size_t>(g) * krows * hw,
                     yn + static_cast<size_t>(g) * cout_g * hw, cout_g, krows, hw);
        }
        if (l.has_bias) {
            for (int c = 0; c < l.out_ch; ++c) {
                double b = l.bias[static_cast<size_t>(c)];
                double* row = yn + static_cast<size_t>(c) * hw;
                for (int i = 0; i < hw; ++i) row[i] += b;
            }
        }
    }
}

void backward_conv(Layer& l, const Tensor& x, const Tensor& dy, Tensor& dx, Tensor& scratch,
                   Tensor& dcol) {
    const int N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    const int Hout = dy.shape[2], Wout = dy.shape[3];
    const int hw = Hout * Wout;
    const int cin_g = l.in_ch / l.groups;
    const int cout_g = l.out_ch / l.groups;
    const int krows = cin_g * l.kh * l.kw;

    const bool unit = (l.kh == 1 && l.kw == 1 && l.stride == 1 && l.pad == 0);
    if (!unit) scratch.resize({C * l.kh * l.kw, hw});
    dcol.resize({C * l.kh * l.kw, hw});

    for (int n = 0; n < N; ++n) {
        const double* xn = x.ptr() + static_cast<size_t>(n) * C * H * W;
        const double* dyn = dy.ptr() + static_cast<size_t>(n) * l.out_ch * hw;
        double* dxn = dx.ptr() + static_cast<size_t>(n) * C * H * W;

        const double* col = xn;
        if (!unit) {
            im2col(xn, C, H, W, l.kh, l.kw, l.stride, l.pad, Hout, Wout, scratch.ptr());
            col = scratch.ptr();
        }
        double* dcol_p = unit ? dxn : dcol.ptr();
        if (!unit) dcol.zero();

        for (int g = 0; g < l.groups; ++g) {
            const double* wg = l.weight.ptr() + static_cast<size_t>(g) * cout_g * krows;
            double* dwg = l.wgrad.ptr() + static_cast<size_t>(g) * cout_g * krows;
            const double* dyg = dyn + static_cast<size_t>(g) * cout_g * hw;
            const double* colg = col + static_cast<size_t>(g) * krows * hw;
            double* dcolg = dcol_p + static_cast<size_t>(g) * krows * hw;
            gemm_a_bt_acc(dyg, colg, dwg, cout_g, hw, krows);
            gemm_at_b_acc(wg, dyg, dcolg, krows, cout_g, hw);
        }
        if (!unit)
            col2im_acc(dcol.ptr(), C, H, W, l.kh, l.kw, l.stride, l.pad, Hout, Wout, dxn);
        if (l.has_bias) {
            for (int c = 0; c < l.out_ch; ++c) {
                double s = 0.0;
                const double* row = dyn + static_cast<size_t>(c) * hw;
                for (int i = 0; i < hw; ++i) s += row[i];
                l.bgrad[static_cast<size_t>(c)] += s;
            }
        }
    }
}

}  // namespace

ForwardResult ModelGraph::forward(const Tensor& x, bool train, Trace& trace) {
    if (x.shape.size() != 4)
        throw ShapeError("model input must be NCHW, got " + x.shape_str());
    if (x.shape[1] != input_channels || x.shape[2] != input_size || x.shape[3] != input_size)
        throw ShapeError("model expects (" + std::to_string(input_channels) + "," +
                         std::to_string(input_size) + "," + std::to_string(input_size) +
                         ") inputs, got " + x.shape_str());
    const int N = x.shape[0];
    const size_t L = layers.size();
    trace.train = train;
    trace.batch = N;
    trace.act.assign(L, Tensor());
    trace.grad.assign(L, Tensor());
    trace.bn_xhat.assign(L, Tensor());
    trace.bn_inv_std.assign(L, {});
    trace.pool_argmax.assign(L, {});

    Tensor scratch;
    for (size_t i = 0; i < L; ++i) {
        Layer& l = layers[i];
        const Tensor& in = (l.input >= 0) ? trace.act[static_cast<size_t>(l.input)] : x;
        Tensor& out = trace.act[i];
        switch (l.kind) {
            case LayerKind::Input:
                out = x;
                break;
            case LayerKind::Conv:
                forward_conv(l, in, out, scratch);
                break;
            case LayerKind::BatchNorm: {
                const int C = in.shape[1], HW = in.shape[2] * in.shape[3];
                const int M = N * HW;
                out.resize(in.shape);
                Tensor& xhat = trace.bn_xhat[i];
                xhat.resize(in.shape);
                auto& istd = trace.bn_inv_std[i];
                istd.assign(static_cast<size_t>(C), 0.0);
                for (int c = 0; c < C; ++c) {
                    double mean, inv;
                    if (train) {
                        double s = 0.0;
                        for (int n = 0; n < N; ++n) {
                            const double* p = in.ptr() + (static_cast<size_t>(n) * C + c) * HW;
                            for (int j = 0; j < HW; ++j) s += p[j];
                        }
                        mean = s / M;
                        double v = 0.0;
                        for (int n = 0; n < N; ++n) {
                            const double* p = in.ptr() + (static_cast<size_t>(n) * C + c) * HW;
                            for (int j = 0; j < HW; ++j) {
                                double d = p[j] - mean;
                                v += d * d;
                            }
                        }
                        v /= M;
                        inv = 1.0 / std::sqrt(v + l.bn_eps);
                        double unbiased = (M > 1) ? v * M / (M - 1) : v;
                        l.run_mean[static_cast<size_t>(c)] =
                            (1.0 - l.bn_momentum) * l.run_mean[static_cast<size_t>(c)] +
                            l.bn_momentum * mean;
                        l.run_var[static_cast<size_t>(c)] =
                            (1.0 - l.bn_momentum) * l.run_var[static_cast<size_t>(c)] +
                            l.bn_momentum * unbiased;
                    } else {
                        mean = l.run_mean[static_cast<size_t>(c)];
                        inv = 1.0 / std::sqrt(l.run_var[static_cast<size_t>(c)] + l.bn_eps);
                    }
                    istd[static_cast<size_t>(c)] = inv;
                    const double g = l.gamma[static_cast<size_t>(c)];
                    const double b = l.beta[static_cast<size_t>(c)];
                    for (int n = 0; n < N; ++n) {
                        const size_t off = (static_cast<size_t>(n) * C + c) * HW;
                        const double* p = in.ptr() + off;
                        double* xh = xhat.ptr() + off;
                        double* o = out.ptr() + off;
                        for (int j = 0; j < HW; ++j) {
                            xh[j] = (p[j] - mean) * inv;
                            o[j] = g * xh[j] + b;
                        }
                    }
                }
                break;
            }
            case LayerKind::ReLU:
                out.resize(in.shape);
                for (size_t j = 0; j < in.numel(); ++j) out[j] = in[j] > 0.0 ? in[j] : 0.0;
                break;
            case LayerKind::ReLU6:
                out.resize(in.shape);
                for (size_t j = 0; j < in.numel(); ++j)
                    out[j] = in[j] <= 0.0 ? 0.0 : (in[j] >= 6.0 ? 6.0 : in[j]);
                break;
            case LayerKind::AvgPool:
            case LayerKind::MaxPool: {
                const int C = in.shape[1], H = in.shape[2], W = in.shape[3];
                const int k = l.pool_k, s = l.pool_stride;
                const int Ho = (H - k) / s + 1, Wo = (W - k) / s + 1;
                out.resize({N, C, Ho, Wo});
                const bool is_max = (l.kind == LayerKind::MaxPool);
                auto& arg = trace.pool_argmax[i];
                if (is_max) arg.assign(out.numel(), 0);
                size_t oi = 0;
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c) {
                        const double* plane = in.ptr() + (static_cast<size_t>(n) * C + c) * H * W;
                        for (int oy = 0; oy < Ho; ++oy)
                            for (int ox = 0; ox < Wo; ++ox, ++oi) {
                                if (is_max) {
                                    double best = -1e300;
                                    int besti = 0;
                                    for (int ky = 0; ky < k; ++ky)
                                        for (int kx = 0; kx < k; ++kx) {
                                            int idx = (oy * s + ky) * W + ox * s + kx;
                                            if (plane[idx] > best) {
                                                best = plane[idx];
                                                besti = idx;
                                            }
                                        }
                                    out[oi] = best;
                                    arg[oi] = besti;
                                } else {
                                    double sum = 0.0;
                                    for (int ky = 0; ky < k; ++ky)
                                        for (int kx = 0; kx < k; ++kx)
                                            sum += plane[(oy * s + ky) * W + ox * s + kx];
                                    out[oi] = sum / (k * k);
                                }
                            }
                    }
                break;
            }
            case LayerKind::GlobalAvgPool: {
                const int C = in.shape[1], HW = in.shape[2] * in.shape[3];
                out.resize({N, C, 1, 1});
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c) {
                        const double* p = in.ptr() + (static_cast<size_t>(n) * C + c) * HW;
                        double s = 0.0;
                        for (int j = 0; j < HW; ++j) s += p[j];
                        out[static_cast<size_t>(n) * C + c] = s / HW;
                    }
                break;
            }
            case LayerKind::Add: {
                const Tensor& in2 = trace.act[static_cast<size_t>(l.input2)];
                if (in.shape != in2.shape)
                    throw ShapeError("layer " + l.name + ": add operands disagree");
                out.resize(in.shape);
                for (size_t j = 0; j < in.numel(); ++j) out[j] = in[j] + in2[j];
                break;
            }
            case LayerKind::Flatten: {
                const int F = in.shape[1] * in.shape[2] * in.shape[3];
                out = in;
                out.shape = {N, F};
                break;
            }
            case LayerKind::Linear: {
                out.resize({N, l.out_ch});
                if (l.out_ch > 0) {
                    gemm_a_bt_acc(in.ptr(), l.weight.ptr(), out.ptr(), N, l.in_ch, l.out_ch);
                    if (l.has_bias)
                        for (int n = 0; n < N; ++n)
                            for (int c = 0; c < l.out_ch; ++c)
                                out[static_cast<size_t>(n) * l.out_ch + c] +=
                                    l.bias[static_cast<size_t>(c)];
                }
                break;
            }
        }
    }
    ForwardResult r;
    r.logits = trace.act[static_cast<size_t>(head_index)];
    r.features = trace.act[static_cast<size_t>(feature_index)];
    return r;
}

ForwardResult ModelGraph::forward_eval(const Tensor& x) const {
    // Inference mode never touches running statistics or parameters, so the
    // const_cast below cannot mutate observable state.
    Trace scratch;
    return const_cast<ModelGraph*>(this)->forward(x, false, scratch);
}

void ModelGraph::backward(Trace& trace, const Tensor& dlogits) {
    const size_t L = layers.size();
    if (trace.act.size() != L) throw ShapeError("trace does not match model");
    const Tensor& logits = trace.act[static_cast<size_t>(head_index)];
    if (dlogits.shape != logits.shape)
        throw ShapeError("dlogits shape " + dlogits.shape_str() + " does not match logits " +
                         logits.shape_str());
    for (size_t i = 0; i < L; ++i) {
        trace.grad[i].resize(trace.act[i].shape);
    }
    trace.grad[static_cast<size_t>(head_index)] = dlogits;

    Tensor scratch, dcol;
    const int N = trace.batch;
    for (size_t ii = L; ii-- > 0;) {
        Layer& l = layers[ii];
        if (l.kind == LayerKind::Input) continue;
        const Tensor& dy = trace.grad[ii];
        const Tensor& in = trace.act[static_cast<size_t>(l.input)];
        Tensor& dx = trace.grad[static_cast<size_t>(l.input)];
        switch (l.kind) {
            case LayerKind::Input:
                break;
            case LayerKind::Conv:
                backward_conv(l, in, dy, dx, scratch, dcol);
                break;
            case LayerKind::BatchNorm: {
                const int C = in.shape[1], HW = in.shape[2] * in.shape[3];
                const int M = N * HW;
                const Tensor& xhat = trace.bn_xhat[ii];
                const auto& istd = trace.bn_inv_std[ii];
                for (int c = 0; c < C; ++c) {
                    double sum_dy = 0.0, sum_dy_xh = 0.0;
                    for (int n = 0; n < N; ++n) {
                        const size_t off = (static_cast<size_t>(n) * C + c) * HW;
                        const double* dyp = dy.ptr() + off;
                        const double* xh = xhat.ptr() + off;
                        for (int j = 0; j < HW; ++j) {
                            sum_dy += dyp[j];
                            sum_dy_xh += dyp[j] * xh[j];
                        }
                    }
                    l.ggrad[static_cast<size_t>(c)] += sum_dy_xh;
                    l.begrad[static_cast<size_t>(c)] += sum_dy;
                    const double g = l.gamma[static_cast<size_t>(c)];
                    const double inv = istd[static_cast<size_t>(c)];
                    if (trace.train) {
                        const double a = g * inv / M;
                        for (int n = 0; n < N; ++n) {
                            const size_t off = (static_cast<size_t>(n) * C + c) * HW;
                            const double* dyp = dy.ptr() + off;
                            const double* xh = xhat.ptr() + off;
                            double* dxp = dx.ptr() + off;
                            for (int j = 0; j < HW; ++j)
                                dxp[j] += a * (M * dyp[j] - sum_dy - xh[j] * sum_dy_xh);
                        }
                    } else {
                        const double a = g * inv;
                        for (int n = 0; n < N; ++n) {
                            const size_t off = (static_cast<size_t>(n) * C + c) * HW;
                            const double* dyp = dy.ptr() + off;
                            double* dxp = dx.ptr() + off;
                            for (int j = 0; j < HW; ++j) dxp[j] += a * dyp[j];
                        }
                    }
                }
                break;
            }
            case LayerKind::ReLU: {
                const Tensor& out = trace.act[ii];
                for (size_t j = 0; j < out.numel(); ++j)
                    if (out[j] > 0.0) dx[j] += dy[j];
                break;
            }
            case LayerKind::ReLU6: {
                const Tensor& out = trace.act[ii];
                for (size_t j = 0; j < out.numel(); ++j)
                    if (out[j] > 0.0 && out[j] < 6.0) dx[j] += dy[j];
                break;
            }
            case LayerKind::AvgPool:
            case LayerKind::MaxPool: {
                const int C = in.shape[1], H = in.shape[2], W = in.shape[3];
                const int k = l.pool_k, s = l.pool_stride;
                const int Ho = dy.shape[2], Wo = dy.shape[3];
                const bool is_max = (l.kind == LayerKind::MaxPool);
                const auto& arg = trace.pool_argmax[ii];
                size_t oi = 0;
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c) {
                        double* plane = dx.ptr() + (static_cast<size_t>(n) * C + c) * H * W;
                        for (int oy = 0; oy < Ho; ++oy)
                            for (int ox = 0; ox < Wo; ++ox, ++oi) {
                                if (is_max) {
                                    plane[arg[oi]] += dy[oi];
                                } else {
                                    const double v = dy[oi] / (k * k);
                                    for (int ky = 0; ky < k; ++ky)
                                        for (int kx = 0; kx < k; ++kx)
                                            plane[(oy * s + ky) * W + ox * s + kx] += v;
                                }
                            }
                    }
                break;
            }
            case LayerKind::GlobalAvgPool: {
                const int C = in.shape[1], HW = in.shape[2] * in.shape[3];
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c) {
                        const double v = dy[static_cast<size_t>(n) * C + c] / HW;
                        double* p = dx.ptr() + (static_cast<size_t>(n) * C + c) * HW;
                        for (int j = 0; j < HW; ++j) p[j] += v;
                    }
                break;
            }
            case LayerKind::Add: {
                Tensor& dx2 = trace.grad[static_cast<size_t>(l.input2)];
                for (size_t j = 0; j < dy.numel(); ++j) {
                    dx[j] += dy[j];
                    dx2[j] += dy[j];
                }
                break;
            }
            case LayerKind::Flatten:
                for (size_t j = 0; j < dy.numel(); ++j) dx[j] += dy[j];
                break;
            case LayerKind::Linear: {
                if (l.out_ch > 0) {
                    gemm_at_b_acc(dy.ptr(), in.ptr(), l.wgrad.ptr(), l.out_ch, N, l.in_ch);
                    gemm_acc(dy.ptr(), l.weight.ptr(), dx.ptr(), N, l.out_ch, l.in_ch);
                    if (l.has_bias)
                        for (int n = 0; n < N; ++n)
                            for (int c = 0; c < l.out_ch; ++c)
                                l.bgrad[static_cast<size_t>(c)] +=
                                    dy[static_cast<size_t>(n) * l.out_ch + c];
                }
                break;
            }
        }
    }
}

void ModelGraph::extend_head(const ClassSet& new_classes, Rng& rng) {
    if (head_index < 0) throw ConfigError("model has no classifier head");
    if (new_classes.size() == 0) return;  // extending by nothing is the identity
    for (int c : new_classes.ids())
        if (slot_of(c) >= 0)
            throw ConfigError("extend_head: class " + std::to_string(c) + " already present");

    Layer& head = layers[static_cast<size_t>(head_index)];
    const int old_out = head.out_ch;
    const int add = static_cast<int>(new_classes.size());
    const int in = head.in_ch;

    Tensor w({old_out + add, in});
    std::copy(head.weight.data.begin(), head.weight.data.end(), w.data.begin());
    for (int r = old_out; r < old_out + add; ++r)
        for (int c = 0; c < in; ++c)
            w[static_cast<size_t>(r) * in + c] = 0.01 * rng.normal();

    Tensor b({old_out + add});
    std::copy(head.bias.data.begin(), head.bias.data.end(), b.data.begin());

    head.weight = std::move(w);
    head.bias = std::move(b);
    head.out_ch = old_out + add;
    head.wgrad.resize(head.weight.shape);
    head.bgrad.resize(head.bias.shape);
    for (int c : new_classes.ids()) seen_classes.push_back(c);
}

BNScaleView ModelGraph::prunable_scales(bool include_stem) const {
    // Consumer adjacency for the reaches-add-junction walk.
    std::vector<std::vector<int>> consumers(layers.size());
    for (size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].input >= 0) consumers[static_cast<size_t>(layers[i].input)].push_back(static_cast<int>(i));
        if (layers[i].input2 >= 0) consumers[static_cast<size_t>(layers[i].input2)].push_back(static_cast<int>(i));
    }
    auto reaches_add = [&](int start) {
        std::vector<int> stack = consumers[static_cast<size_t>(start)];
        std::vector<char> seen(layers.size(), 0);
        while (!stack.empty()) {
            int i = stack.back();
            stack.pop_back();
            if (seen[static_cast<size_t>(i)]) continue;
            seen[static_cast<size_t>(i)] = 1;
            const Layer& l = layers[static_cast<size_t>(i)];
            if (l.kind == LayerKind::Add) return true;
            if (mask_preserving(l))
                for (int c : consumers[static_cast<size_t>(i)]) stack.push_back(c);
        }
        return false;
    };

    BNScaleView view;
    bool any_bn = false;
    for (size_t i = 0; i < layers.size(); ++i) {
        const Layer& l = layers[i];
        if (l.kind != LayerKind::BatchNorm) continue;
        any_bn = true;
        const bool ok = l.prunable_candidate && !reaches_add(static_cast<int>(i)) &&
                        (include_stem || !l.is_stem);
        for (int c = 0; c < static_cast<int>(l.gamma.numel()); ++c) {
            BNScaleEntry e;
            e.layer = static_cast<int>(i);
            e.channel = c;
            e.gamma = l.gamma[static_cast<size_t>(c)];
            e.prunable = ok;
            view.entries.push_back(e);
        }
    }
    if (!any_bn)
        throw ConfigError("architecture exposes no batchnorm scales; channel pruning unsupported");
    return view;
}

long ModelGraph::count_params() const {
    long n = 0;
    for (const Layer& l : layers)
        n += static_cast<long>(l.weight.numel() + l.bias.numel() + l.gamma.numel() + l.beta.numel());
    return n;
}

CostReport ModelGraph::cost_report(int in_size) const {
    auto shapes = layer_shapes(in_size);
    CostReport r;
    for (size_t i = 0; i < layers.size(); ++i) {
        const Layer& l = layers[i];
        CostItem item;
        item.name = l.name;
        item.kind = layer_kind_name(l.kind);
        item.params = static_cast<long>(l.weight.numel() + l.bias.numel() + l.gamma.numel() +
                                        l.beta.numel());
        if (l.kind == LayerKind::Conv) {
            const auto& os = shapes[i];
            item.flops = 2L * l.kh * l.kw * (l.in_ch / l.groups) * l.out_ch * os[1] * os[2];
        } else if (l.kind == LayerKind::Linear) {
            item.flops = 2L * l.in_ch * l.out_ch;
        }
        if (item.params == 0 && item.flops == 0) continue;
        r.params += item.params;
        r.flops += item.flops;
        r.per_layer.push_back(std::move(item));
    }
    return r;
}

CostReport ModelGraph::count_flops() const { return cost_report(input_size); }

std::string CostReport::to_text() const {
    std::ostringstream os;
    os << "layer                            kind        params       flops\n";
    for (const auto& it : per_layer) {
        os << it.name;
        for (size_t i = it.name.size(); i < 33; ++i) os << ' ';
        os << it.kind;
        for (size_t i = it.kind.size(); i < 10; ++i) os << ' ';
        std::string p = std::to_string(it.params), f = std::to_string(it.flops);
        for (size_t i = p.size(); i < 12; ++i) os << ' ';
        os << p;
        for (size_t i = f.size(); i < 12; ++i) os << ' ';
        os << f << "\n";
    }
    os << "total params " << params << "  total flops " << flops << "\n";
    return os.str();
}

std::string CostReport::to_json() const {
    std::ostringstream os;
    os << "{\n  \"params\": " << params << ",\n  \"flops\": " << flops << ",\n  \"per_layer\": [";
    for (size_t i = 0; i < per_layer.size(); ++i) {
        if (i) os << ",";
        os << "\n    {\"name\": \"" << per_layer[i].name << "\", \"kind\": \"" << per_layer[i].kind
           << "\", \"params\": " << per_layer[i].params << ", \"flops\": " << per_layer[i].flops
           << "}";
    }
    os << "\n  ]\n}\n";
    return os.str();
}

void ModelGraph::zero_grads() {
    for (Layer& l : layers) {
        l.wgrad.zero();
        l.bgrad.zero();
        l.ggrad.zero();
        l.begrad.zero();
    }
}

std::vector<ModelGraph::ParamRef> ModelGraph::parameters() {
    std::vector<ParamRef> out;
    for (size_t i = 0; i < layers.size(); ++i) {
        Layer& l = layers[i];
        if (!l.weight.empty()) out.push_back({static_cast<int>(i), 0, &l.weight, &l.wgrad});
        if (!l.bias.empty()) out.push_back({static_cast<int>(i), 1, &l.bias, &l.bgrad});
        if (!l.gamma.empty()) out.push_back({static_cast<int>(i), 2, &l.gamma, &l.ggrad});
        if (!l.beta.empty()) out.push_back({static_cast<int>(i), 3, &l.beta, &l.begrad});
    }
    return out;
}

uint64_t ModelGraph::parameter_checksum() const {
    uint64_t h = fnv1a("model", 5);
    auto mix = [&h](const Tensor& t) {
        if (!t.empty()) h = fnv1a(t.ptr(), t.numel() * sizeof(double), h);
    };
    for (const Layer& l : layers) {
        h = fnv1a(l.name.data(), l.name.size(), h);
        mix(l.weight);
        mix(l.bias);
        mix(l.gamma);
        mix(l.beta);
        mix(l.run_mean);
        mix(l.run_var);
    }
    for (int c : seen_classes) h = fnv1a(&c, sizeof(c), h);
    return h;
}

}  // namespace cilbench
