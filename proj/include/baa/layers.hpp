#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "baa/tensor.hpp"

namespace baa {

/// A trainable weight array with its gradient buffer. Only `value` is
/// ever serialized.
struct Param {
    std::vector<double> value;
    std::vector<double> grad;

    Param() = default;
    explicit Param(std::size_t n, double fill = 0.0) : value(n, fill), grad(n, 0.0) {}
    std::size_t size() const noexcept { return value.size(); }
    void zero_grad() { grad.assign(value.size(), 0.0); }

    template <class Archive>
    void save(Archive& ar) const { ar(value); }
    template <class Archive>
    void load(Archive& ar) {
        ar(value);
        grad.assign(value.size(), 0.0);
    }
};

enum class Padding : std::uint8_t { same, valid };
enum class ActivationKind : std::uint8_t { relu, relu6 };

/// Grouped 2-D convolution over NHWC input; weight layout is
/// [kernel][kernel][in_channels / groups][out_channels].
struct Conv2d {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 3;
    int stride = 1;
    int groups = 1;
    Padding padding = Padding::same;
    Param weight;
    Param bias;

    std::size_t parameter_count() const noexcept { return weight.size() + bias.size(); }

    template <class Archive>
    void serialize(Archive& ar) { ar(in_channels, out_channels, kernel, stride, groups, padding, weight, bias); }
};

struct Activation {
    ActivationKind kind = ActivationKind::relu;

    template <class Archive>
    void serialize(Archive& ar) { ar(kind); }
};

struct MaxPool2d {
    int size = 2;
    int stride = 2;

    template <class Archive>
    void serialize(Archive& ar) { ar(size, stride); }
};

using Layer = std::variant<Conv2d, Activation, MaxPool2d>;

/// Sequential convolutional feature extractor with its classifier removed.
/// Batch normalisation in pretrained stacks is expected to be folded into
/// the preceding convolution when the blob is exported.
struct Backbone {
    std::string id;
    int input_channels = 3;
    std::vector<Layer> layers;

    int output_channels() const;
    std::size_t parameter_count() const;
    std::vector<std::string> describe() const;

    template <class Archive>
    void serialize(Archive& ar) { ar(id, input_channels, layers); }
};

/// Per-layer inputs and pooling argmax recorded during a forward pass so
/// the backward pass can run.
struct BackboneTrace {
    std::vector<Tensor> inputs;
    std::vector<std::vector<std::size_t>> argmax;
};

Conv2d make_conv(int in_channels, int out_channels, int kernel, int stride = 1, int groups = 1,
                 Padding padding = Padding::same);

Tensor conv_forward(const Conv2d& conv, const Tensor& x);
/// Accumulates dW, db into conv and returns dL/dx.
Tensor conv_backward(Conv2d& conv, const Tensor& x, const Tensor& grad_out);

Tensor backbone_forward(const Backbone& backbone, const Tensor& x, BackboneTrace* trace = nullptr);
/// Accumulates parameter gradients of every conv layer.
void backbone_backward(Backbone& backbone, const BackboneTrace& trace, Tensor grad_out);

/// Output spatial size of a (possibly strided) window operation.
int window_output_size(int input, int kernel, int stride, Padding padding);

} // namespace baa
