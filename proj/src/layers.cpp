#include "baa/layers.hpp"

#include <algorithm>
#include <limits>

#include <fmt/format.h>

#include "baa/errors.hpp"

namespace baa {

namespace {

struct Geometry {
    int batch, in_h, in_w, in_c;
    int out_h, out_w;
    int pad_top, pad_left;
};

int same_pad_before(int input, int kernel, int stride) {
    const int out = (input + stride - 1) / stride;
    const int total = std::max((out - 1) * stride + kernel - input, 0);
    return total / 2;
}

Geometry conv_geometry(const Conv2d& conv, const Tensor& x) {
    if (x.rank() != 4 || static_cast<int>(x.dim(3)) != conv.in_channels)
        throw ShapeMismatch(fmt::format("conv expects [B,H,W,{}], got {}", conv.in_channels, shape_string(x.shape)));
    Geometry g{};
    g.batch = static_cast<int>(x.dim(0));
    g.in_h = static_cast<int>(x.dim(1));
    g.in_w = static_cast<int>(x.dim(2));
    g.in_c = conv.in_channels;
    g.out_h = window_output_size(g.in_h, conv.kernel, conv.stride, conv.padding);
    g.out_w = window_output_size(g.in_w, conv.kernel, conv.stride, conv.padding);
    if (g.out_h < 1 || g.out_w < 1)
        throw ShapeMismatch("input " + shape_string(x.shape) + " too small for convolution");
    if (conv.padding == Padding::same) {
        g.pad_top = same_pad_before(g.in_h, conv.kernel, conv.stride);
        g.pad_left = same_pad_before(g.in_w, conv.kernel, conv.stride);
    }
    return g;
}

double activate(ActivationKind kind, double v) {
    switch (kind) {
    case ActivationKind::relu: return v > 0.0 ? v : 0.0;
    case ActivationKind::relu6: return std::clamp(v, 0.0, 6.0);
    }
    return v;
}

double activation_slope(ActivationKind kind, double v) {
    switch (kind) {
    case ActivationKind::relu: return v > 0.0 ? 1.0 : 0.0;
    case ActivationKind::relu6: return (v > 0.0 && v < 6.0) ? 1.0 : 0.0;
    }
    return 1.0;
}

Tensor pool_forward(const MaxPool2d& pool, const Tensor& x, std::vector<std::size_t>* argmax) {
    if (x.rank() != 4)
        throw ShapeMismatch("max pool expects [B,H,W,C], got " + shape_string(x.shape));
    const int b = static_cast<int>(x.dim(0)), h = static_cast<int>(x.dim(1));
    const int w = static_cast<int>(x.dim(2)), c = static_cast<int>(x.dim(3));
    const int oh = window_output_size(h, pool.size, pool.stride, Padding::valid);
    const int ow = window_output_size(w, pool.size, pool.stride, Padding::valid);
    if (oh < 1 || ow < 1)
        throw ShapeMismatch("input " + shape_string(x.shape) + " too small for max pooling");

    Tensor out({std::size_t(b), std::size_t(oh), std::size_t(ow), std::size_t(c)});
    if (argmax)
        argmax->assign(out.size(), 0);
    std::size_t o = 0;
    for (int n = 0; n < b; ++n)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox)
                for (int k = 0; k < c; ++k, ++o) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t best_at = 0;
                    for (int py = 0; py < pool.size; ++py)
                        for (int px = 0; px < pool.size; ++px) {
                            const std::size_t at =
                                ((std::size_t(n) * h + oy * pool.stride + py) * w + ox * pool.stride + px) * c + k;
                            if (x[at] > best) {
                                best = x[at];
                                best_at = at;
                            }
                        }
                    out[o] = best;
                    if (argmax)
                        (*argmax)[o] = best_at;
                }
    return out;
}

} // namespace

int window_output_size(int input, int kernel, int stride, Padding padding) {
    if (padding == Padding::same)
        return (input + stride - 1) / stride;
    return input < kernel ? 0 : (input - kernel) / stride + 1;
}

Conv2d make_conv(int in_channels, int out_channels, int kernel, int stride, int groups, Padding padding) {
    if (in_channels % groups != 0 || out_channels % groups != 0)
        throw ConfigError("conv channels must be divisible by groups");
    Conv2d conv;
    conv.in_channels = in_channels;
    conv.out_channels = out_channels;
    conv.kernel = kernel;
    conv.stride = stride;
    conv.groups = groups;
    conv.padding = padding;
    conv.weight = Param(std::size_t(kernel) * kernel * (in_channels / groups) * out_channels);
    conv.bias = Param(std::size_t(out_channels));
    return conv;
}

Tensor conv_forward(const Conv2d& conv, const Tensor& x) {
    const Geometry g = conv_geometry(conv, x);
    const int ipg = conv.in_channels / conv.groups;
    const int opg = conv.out_channels / conv.groups;
    const int oc_total = conv.out_channels;
    const double* weight = conv.weight.value.data();

    Tensor out({std::size_t(g.batch), std::size_t(g.out_h), std::size_t(g.out_w), std::size_t(oc_total)});
    for (int n = 0; n < g.batch; ++n) {
        for (int oy = 0; oy < g.out_h; ++oy) {
            for (int ox = 0; ox < g.out_w; ++ox) {
                double* acc = &out[((std::size_t(n) * g.out_h + oy) * g.out_w + ox) * oc_total];
                std::copy(conv.bias.value.begin(), conv.bias.value.end(), acc);
                for (int ky = 0; ky < conv.kernel; ++ky) {
                    const int iy = oy * conv.stride + ky - g.pad_top;
                    if (iy < 0 || iy >= g.in_h)
                        continue;
                    for (int kx = 0; kx < conv.kernel; ++kx) {
                        const int ix = ox * conv.stride + kx - g.pad_left;
                        if (ix < 0 || ix >= g.in_w)
                            continue;
                        const double* in = &x[((std::size_t(n) * g.in_h + iy) * g.in_w + ix) * g.in_c];
                        const double* wk = weight + std::size_t(ky * conv.kernel + kx) * ipg * oc_total;
                        for (int grp = 0; grp < conv.groups; ++grp) {
                            for (int icg = 0; icg < ipg; ++icg) {
                                const double v = in[grp * ipg + icg];
                                const double* wrow = wk + std::size_t(icg) * oc_total + grp * opg;
                                double* a = acc + grp * opg;
                                for (int ocg = 0; ocg < opg; ++ocg)
                                    a[ocg] += v * wrow[ocg];
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

Tensor conv_backward(Conv2d& conv, const Tensor& x, const Tensor& grad_out) {
    const Geometry g = conv_geometry(conv, x);
    const int ipg = conv.in_channels / conv.groups;
    const int opg = conv.out_channels / conv.groups;
    const int oc_total = conv.out_channels;
    if (conv.weight.grad.size() != conv.weight.size())
        conv.weight.zero_grad();
    if (conv.bias.grad.size() != conv.bias.size())
        conv.bias.zero_grad();
    const double* weight = conv.weight.value.data();
    double* dweight = conv.weight.grad.data();

    Tensor dx(x.shape);
    for (int n = 0; n < g.batch; ++n) {
        for (int oy = 0; oy < g.out_h; ++oy) {
            for (int ox = 0; ox < g.out_w; ++ox) {
                const double* go = &grad_out[((std::size_t(n) * g.out_h + oy) * g.out_w + ox) * oc_total];
                for (int oc = 0; oc < oc_total; ++oc)
                    conv.bias.grad[oc] += go[oc];
                for (int ky = 0; ky < conv.kernel; ++ky) {
                    const int iy = oy * conv.stride + ky - g.pad_top;
                    if (iy < 0 || iy >= g.in_h)
                        continue;
                    for (int kx = 0; kx < conv.kernel; ++kx) {
                        const int ix = ox * conv.stride + kx - g.pad_left;
                        if (ix < 0 || ix >= g.in_w)
                            continue;
                        const std::size_t in_at = ((std::size_t(n) * g.in_h + iy) * g.in_w + ix) * g.in_c;
                        const std::size_t wk = std::size_t(ky * conv.kernel + kx) * ipg * oc_total;
                        for (int grp = 0; grp < conv.groups; ++grp) {
                            for (int icg = 0; icg < ipg; ++icg) {
                                const double v = x[in_at + grp * ipg + icg];
                                const std::size_t wrow = wk + std::size_t(icg) * oc_total + grp * opg;
                                double dv = 0.0;
                                for (int ocg = 0; ocg < opg; ++ocg) {
                                    const double gval = go[grp * opg + ocg];
                                    dweight[wrow + ocg] += v * gval;
                                    dv += weight[wrow + ocg] * gval;
                                }
                                dx[in_at + grp * ipg + icg] += dv;
                            }
                        }
                    }
                }
            }
        }
    }
    return dx;
}

int Backbone::output_channels() const {
    int channels = input_channels;
    for (const auto& layer : layers)
        if (const auto* conv = std::get_if<Conv2d>(&layer))
            channels = conv->out_channels;
    return channels;
}

std::size_t Backbone::parameter_count() const {
    std::size_t total = 0;
    for (const auto& layer : layers)
        if (const auto* conv = std::get_if<Conv2d>(&layer))
            total += conv->parameter_count();
    return total;
}

std::vector<std::string> Backbone::describe() const {
    std::vector<std::string> out;
    for (const auto& layer : layers) {
        std::visit(
            [&](const auto& l) {
                using T = std::decay_t<decltype(l)>;
                if constexpr (std::is_same_v<T, Conv2d>)
                    out.push_back(fmt::format("conv2d({}->{}, k={}, s={}, g={}, {})", l.in_channels, l.out_channels,
                                              l.kernel, l.stride, l.groups,
                                              l.padding == Padding::same ? "same" : "valid"));
                else if constexpr (std::is_same_v<T, Activation>)
                    out.push_back(l.kind == ActivationKind::relu ? "relu" : "relu6");
                else
                    out.push_back(fmt::format("max_pool({}, s={})", l.size, l.stride));
            },
            layer);
    }
    return out;
}

Tensor backbone_forward(const Backbone& backbone, const Tensor& x, BackboneTrace* trace) {
    if (trace) {
        trace->inputs.clear();
        trace->argmax.assign(backbone.layers.size(), {});
    }
    Tensor current = x;
    for (std::size_t i = 0; i < backbone.layers.size(); ++i) {
        const auto& layer = backbone.layers[i];
        Tensor next;
        if (const auto* conv = std::get_if<Conv2d>(&layer)) {
            next = conv_forward(*conv, current);
        } else if (const auto* act = std::get_if<Activation>(&layer)) {
            next = current;
            for (auto& v : next.data)
                v = activate(act->kind, v);
        } else {
            next = pool_forward(std::get<MaxPool2d>(layer), current, trace ? &trace->argmax[i] : nullptr);
        }
        if (trace)
            trace->inputs.push_back(std::move(current));
        current = std::move(next);
    }
    return current;
}

void backbone_backward(Backbone& backbone, const BackboneTrace& trace, Tensor grad) {
    for (std::size_t i = backbone.layers.size(); i-- > 0;) {
        auto& layer = backbone.layers[i];
        const Tensor& input = trace.inputs.at(i);
        if (auto* conv = std::get_if<Conv2d>(&layer)) {
            Tensor dx = conv_backward(*conv, input, grad);
            grad = std::move(dx);
        } else if (const auto* act = std::get_if<Activation>(&layer)) {
            for (std::size_t k = 0; k < grad.size(); ++k)
                grad[k] *= activation_slope(act->kind, input[k]);
        } else {
            Tensor dx(input.shape);
            const auto& argmax = trace.argmax.at(i);
            for (std::size_t k = 0; k < grad.size(); ++k)
                dx[argmax[k]] += grad[k];
            grad = std::move(dx);
        }
    }
}

std::string shape_string(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i)
        s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
}

} // namespace baa
