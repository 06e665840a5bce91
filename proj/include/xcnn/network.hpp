#pragma once

#include <cmath>
#include <cstdint>
#include <exception>
#include <string>
#include <thread>
#include <type_traits>
#include <variant>
#include <vector>

#include "xcnn/error.hpp"
#include "xcnn/ops.hpp"
#include "xcnn/rng.hpp"
#include "xcnn/tensor.hpp"

namespace xcnn {

enum class LayerKind : std::uint8_t { conv, relu, maxpool, flatten, dense, output };

inline const char* kind_name(LayerKind k) {
    switch (k) {
    case LayerKind::conv: return "conv";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::flatten: return "flatten";
    case LayerKind::dense: return "dense";
    case LayerKind::output: return "output";
    }
    return "?";
}

struct ConvLayer {
    std::size_t out_channels = 0;
    std::size_t kernel_h = 3, kernel_w = 3;
    std::size_t stride = 1, pad = 0;
    Tensor weights; // [out, in, kh, kw]
    Tensor bias;    // [out]
    static constexpr LayerKind kind = LayerKind::conv;
};

struct ReluLayer {
    static constexpr LayerKind kind = LayerKind::relu;
};

struct MaxPoolLayer {
    std::size_t window = 2, stride = 2;
    static constexpr LayerKind kind = LayerKind::maxpool;
};

struct FlattenLayer {
    static constexpr LayerKind kind = LayerKind::flatten;
};

struct DenseLayer {
    std::size_t out_features = 0;
    Tensor weights; // [out, in]
    Tensor bias;    // [out]
    static constexpr LayerKind kind = LayerKind::dense;
};

/// Softmax head; the only squashing kind supported.
struct OutputLayer {
    std::size_t classes = 0;
    static constexpr LayerKind kind = LayerKind::output;
};

using LayerSpec = std::variant<ConvLayer, ReluLayer, MaxPoolLayer, FlattenLayer, DenseLayer, OutputLayer>;

inline LayerKind kind_of(const LayerSpec& layer) {
    return std::visit([](const auto& l) { return std::decay_t<decltype(l)>::kind; }, layer);
}

/// Conv-layer index, 1-based, counting conv layers only.
using ConvIndex = std::size_t;

/// A validated, type-checked sequence of layers.
///
/// Construction checks that every layer's output shape feeds the next, that
/// spatial layers precede `flatten`, and that a single output layer comes
/// last. Parameter tensors left empty are allocated as zeros.
class Network {
public:
    Network() = default;

    Network(Shape input_shape, std::vector<LayerSpec> layers)
        : input_shape_(std::move(input_shape)), layers_(std::move(layers)) {
        validate();
    }

    const Shape& input_shape() const noexcept { return input_shape_; }
    const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
    std::vector<LayerSpec>& mutable_layers() noexcept { return layers_; }
    std::size_t size() const noexcept { return layers_.size(); }

    /// Output shape of layer `i` (0-based position).
    const Shape& output_shape(std::size_t i) const { return shapes_.at(i); }
    const Shape& input_shape_of(std::size_t i) const { return i == 0 ? input_shape_ : shapes_.at(i - 1); }

    std::size_t conv_count() const noexcept { return conv_positions_.size(); }
    std::size_t classes() const { return std::get<OutputLayer>(layers_.back()).classes; }

    /// Layer position of conv layer `l` (1-based).
    std::size_t conv_position(ConvIndex l) const {
        if (l < 1 || l > conv_positions_.size())
            throw UsageError("conv layer " + std::to_string(l) + " out of range 1.." +
                             std::to_string(conv_positions_.size()));
        return conv_positions_[l - 1];
    }

    /// Position whose output is recorded as conv layer `l`'s activation:
    /// the following relu when there is one, otherwise the conv itself.
    std::size_t activation_position(ConvIndex l) const {
        const std::size_t p = conv_position(l);
        return (p + 1 < layers_.size() && kind_of(layers_[p + 1]) == LayerKind::relu) ? p + 1 : p;
    }

    const ConvLayer& conv(ConvIndex l) const { return std::get<ConvLayer>(layers_[conv_position(l)]); }

    std::size_t channels(ConvIndex l) const { return conv(l).out_channels; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& layer : layers_) {
            if (auto* c = std::get_if<ConvLayer>(&layer)) n += c->weights.size() + c->bias.size();
            if (auto* d = std::get_if<DenseLayer>(&layer)) n += d->weights.size() + d->bias.size();
        }
        return n;
    }

    friend bool operator==(const Network& a, const Network& b) {
        if (a.input_shape_ != b.input_shape_ || a.layers_.size() != b.layers_.size()) return false;
        for (std::size_t i = 0; i < a.layers_.size(); ++i) {
            const auto& x = a.layers_[i];
            const auto& y = b.layers_[i];
            if (x.index() != y.index()) return false;
            if (auto* c = std::get_if<ConvLayer>(&x)) {
                const auto& d = std::get<ConvLayer>(y);
                if (c->out_channels != d.out_channels || c->kernel_h != d.kernel_h || c->kernel_w != d.kernel_w ||
                    c->stride != d.stride || c->pad != d.pad || !bitwise_equal(c->weights, d.weights) ||
                    !bitwise_equal(c->bias, d.bias))
                    return false;
            } else if (auto* p = std::get_if<MaxPoolLayer>(&x)) {
                const auto& q = std::get<MaxPoolLayer>(y);
                if (p->window != q.window || p->stride != q.stride) return false;
            } else if (auto* e = std::get_if<DenseLayer>(&x)) {
                const auto& f = std::get<DenseLayer>(y);
                if (e->out_features != f.out_features || !bitwise_equal(e->weights, f.weights) ||
                    !bitwise_equal(e->bias, f.bias))
                    return false;
            } else if (auto* o = std::get_if<OutputLayer>(&x)) {
                if (o->classes != std::get<OutputLayer>(y).classes) return false;
            }
        }
        return true;
    }

private:
    void validate() {
        if (input_shape_.size() != 3) throw ShapeError("network input must be [channels,height,width]");
        if (layers_.empty() || kind_of(layers_.back()) != LayerKind::output)
            throw ShapeError("network must end with an output layer");
        shapes_.clear();
        conv_positions_.clear();
        Shape cur = input_shape_;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            const std::string where = "layer " + std::to_string(i) + " (" + kind_name(kind_of(layers_[i])) + ")";
            std::visit(
                [&](auto& l) {
                    using L = std::decay_t<decltype(l)>;
                    if constexpr (std::is_same_v<L, ConvLayer>) {
                        if (cur.size() != 3) throw ShapeError(where + ": conv after flatten");
                        if (l.stride < 1) throw ShapeError(where + ": stride must be >= 1");
                        if (l.out_channels < 1) throw ShapeError(where + ": no output channels");
                        if (cur[1] + 2 * l.pad < l.kernel_h || cur[2] + 2 * l.pad < l.kernel_w || l.kernel_h < 1 ||
                            l.kernel_w < 1)
                            throw ShapeError(where + ": kernel larger than padded input " + shape_str(cur));
                        const Shape w{l.out_channels, cur[0], l.kernel_h, l.kernel_w};
                        if (l.weights.empty()) l.weights = Tensor(w);
                        if (l.bias.empty()) l.bias = Tensor({l.out_channels});
                        if (l.weights.shape() != w)
                            throw ShapeError(where + ": weights " + shape_str(l.weights.shape()) + ", expected " + shape_str(w));
                        if (l.bias.shape() != Shape{l.out_channels}) throw ShapeError(where + ": bias shape mismatch");
                        cur = {l.out_channels, ops::conv_extent(cur[1], l.kernel_h, l.stride, l.pad),
                               ops::conv_extent(cur[2], l.kernel_w, l.stride, l.pad)};
                        conv_positions_.push_back(i);
                    } else if constexpr (std::is_same_v<L, MaxPoolLayer>) {
                        if (cur.size() != 3) throw ShapeError(where + ": maxpool after flatten");
                        if (l.window < 2) throw ShapeError(where + ": window must be >= 2");
                        if (l.stride < 1) throw ShapeError(where + ": stride must be >= 1");
                        if (cur[1] < l.window || cur[2] < l.window) throw ShapeError(where + ": window exceeds input");
                        cur = {cur[0], ops::conv_extent(cur[1], l.window, l.stride, 0),
                               ops::conv_extent(cur[2], l.window, l.stride, 0)};
                    } else if constexpr (std::is_same_v<L, FlattenLayer>) {
                        cur = {shape_size(cur)};
                    } else if constexpr (std::is_same_v<L, DenseLayer>) {
                        if (cur.size() != 1) throw ShapeError(where + ": dense needs a flattened input");
                        if (l.out_features < 1) throw ShapeError(where + ": no output features");
                        const Shape w{l.out_features, cur[0]};
                        if (l.weights.empty()) l.weights = Tensor(w);
                        if (l.bias.empty()) l.bias = Tensor({l.out_features});
                        if (l.weights.shape() != w)
                            throw ShapeError(where + ": weights " + shape_str(l.weights.shape()) + ", expected " + shape_str(w));
                        if (l.bias.shape() != Shape{l.out_features}) throw ShapeError(where + ": bias shape mismatch");
                        cur = {l.out_features};
                    } else if constexpr (std::is_same_v<L, OutputLayer>) {
                        if (i + 1 != layers_.size()) throw ShapeError(where + ": output layer must be last");
                        if (cur.size() != 1 || cur[0] != l.classes)
                            throw ShapeError(where + ": expects " + std::to_string(l.classes) + " logits, got " + shape_str(cur));
                        if (l.classes < 2) throw ShapeError(where + ": need at least two classes");
                    }
                },
                layers_[i]);
            shapes_.push_back(cur);
        }
    }

    Shape input_shape_;
    std::vector<LayerSpec> layers_;
    std::vector<Shape> shapes_;
    std::vector<std::size_t> conv_positions_;
};

/// He-normal weights, zero biases.
inline void he_initialize(Network& net, Rng& rng) {
    for (auto& layer : net.mutable_layers()) {
        if (auto* c = std::get_if<ConvLayer>(&layer)) {
            const double fan_in = static_cast<double>(c->weights.dim(1) * c->kernel_h * c->kernel_w);
            for (auto& w : c->weights.values()) w = static_cast<float>(rng.normal() * std::sqrt(2.0 / fan_in));
            c->bias = Tensor(c->bias.shape());
        } else if (auto* d = std::get_if<DenseLayer>(&layer)) {
            const double fan_in = static_cast<double>(d->weights.dim(1));
            for (auto& w : d->weights.values()) w = static_cast<float>(rng.normal() * std::sqrt(2.0 / fan_in));
            d->bias = Tensor(d->bias.shape());
        }
    }
}

inline ConvLayer conv3x3(std::size_t out_channels) { return ConvLayer{out_channels, 3, 3, 1, 1, {}, {}}; }

/// Desk-scale classifier: 3x32x32 input, seven 3x3 conv layers in three
/// pooled stages (16,16 | 32,32,32 | 64,64), dense 128, dense 2, softmax.
inline Network reference_network() {
    std::vector<LayerSpec> l;
    auto stage = [&](std::size_t channels, int count) {
        for (int i = 0; i < count; ++i) {
            l.emplace_back(conv3x3(channels));
            l.emplace_back(ReluLayer{});
        }
        l.emplace_back(MaxPoolLayer{2, 2});
    };
    stage(16, 2);
    stage(32, 3);
    stage(64, 2);
    l.emplace_back(FlattenLayer{});
    l.emplace_back(DenseLayer{128, {}, {}});
    l.emplace_back(ReluLayer{});
    l.emplace_back(DenseLayer{2, {}, {}});
    l.emplace_back(OutputLayer{2});
    return Network({3, 32, 32}, std::move(l));
}

/// Small patch classifier: conv(16)-pool-conv(16)-pool-dense(32)-softmax.
inline Network secondary_network(const Shape& input = {3, 16, 16}, std::size_t classes = 2) {
    std::vector<LayerSpec> l;
    l.emplace_back(conv3x3(16));
    l.emplace_back(ReluLayer{});
    l.emplace_back(MaxPoolLayer{2, 2});
    l.emplace_back(conv3x3(16));
    l.emplace_back(ReluLayer{});
    l.emplace_back(MaxPoolLayer{2, 2});
    l.emplace_back(FlattenLayer{});
    l.emplace_back(DenseLayer{32, {}, {}});
    l.emplace_back(ReluLayer{});
    l.emplace_back(DenseLayer{classes, {}, {}});
    l.emplace_back(OutputLayer{classes});
    return Network(input, std::move(l));
}

/// Forward-pass record for one input.
struct ActivationTrace {
    std::size_t sample_id = 0;
    /// Index l-1 holds conv layer l's activation [channels,R,C], post-relu.
    std::vector<Tensor> conv_activations;
    /// Indexed by layer position; empty except at maxpool layers.
    std::vector<ops::Switches> switches;
    /// Softmax output.
    Tensor probabilities;

    std::size_t predicted_class() const {
        const auto v = probabilities.values();
        return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
    }
    bool recorded() const noexcept { return !conv_activations.empty(); }
    const Tensor& activation(ConvIndex l) const { return conv_activations.at(l - 1); }
};

namespace detail {

/// Full per-layer outputs, kept for backpropagation.
struct ForwardCache {
    std::vector<Tensor> outputs;
    std::vector<ops::Switches> switches;
    std::vector<FloatBuffer> columns; // im2col buffers of conv layers
};

inline Tensor run_layers(const Network& net, const Tensor& image, ForwardCache* cache, ActivationTrace* trace) {
    if (image.shape() != net.input_shape())
        throw ShapeError("input " + shape_str(image.shape()) + " does not match network input " +
                         shape_str(net.input_shape()));
    image.require_finite("network input");
    const std::size_t n = net.size();
    if (cache) {
        cache->outputs.assign(n, Tensor{});
        cache->switches.assign(n, ops::Switches{});
        cache->columns.resize(n);
    }
    if (trace) {
        trace->conv_activations.clear();
        trace->switches.assign(n, ops::Switches{});
    }
    FloatBuffer scratch;
    Tensor cur = image;
    std::size_t next_conv = 1;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& layer = net.layers()[i];
        ops::Switches sw;
        switch (kind_of(layer)) {
        case LayerKind::conv: {
            const auto& c = std::get<ConvLayer>(layer);
            cur = ops::conv2d(cur, c.weights, &c.bias, c.stride, c.pad, cache ? cache->columns[i] : scratch);
            break;
        }
        case LayerKind::relu: cur = ops::relu(std::move(cur)); break;
        case LayerKind::maxpool: {
            const auto& p = std::get<MaxPoolLayer>(layer);
            cur = ops::maxpool(cur, p.window, p.stride, sw);
            break;
        }
        case LayerKind::flatten: cur = cur.reshaped({cur.size()}); break;
        case LayerKind::dense: {
            const auto& d = std::get<DenseLayer>(layer);
            cur = ops::dense(cur, d.weights, d.bias);
            break;
        }
        case LayerKind::output: cur = ops::softmax(cur); break;
        }
        if (!cur.all_finite())
            throw NumericError("non-finite activation at layer " + std::to_string(i) + " (" +
                               kind_name(kind_of(layer)) + ")");
        if (trace) {
            if (next_conv <= net.conv_count() && net.activation_position(next_conv) == i) {
                trace->conv_activations.push_back(cur);
                ++next_conv;
            }
            if (!sw.empty()) trace->switches[i] = sw;
        }
        if (cache) {
            cache->outputs[i] = cur;
            cache->switches[i] = std::move(sw);
        }
    }
    return cur;
}

} // namespace detail

/// Run `image` through `net`. With `record`, the trace also holds every
/// conv activation and every pooling switch; the probabilities are the same
/// bits either way.
inline ActivationTrace forward(const Network& net, const Tensor& image, bool record = true, std::size_t sample_id = 0) {
    ActivationTrace trace;
    trace.sample_id = sample_id;
    trace.probabilities = detail::run_layers(net, image, nullptr, record ? &trace : nullptr);
    return trace;
}

/// Forward every image; traces come back in input order and are identical to
/// calling `forward` on each image separately, whatever `threads` is.
inline std::vector<ActivationTrace> forward_batch(const Network& net, const std::vector<Tensor>& images,
                                                  bool record = true, unsigned threads = 1) {
    std::vector<ActivationTrace> traces(images.size());
    std::vector<std::exception_ptr> errors(images.size());
    auto work = [&](std::size_t begin, std::size_t step) {
        for (std::size_t i = begin; i < images.size(); i += step) {
            try {
                traces[i] = forward(net, images[i], record, i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(images.size())));
    if (threads == 1) {
        work(0, 1);
    } else {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
    }
    for (std::size_t i = 0; i < errors.size(); ++i) {
        if (!errors[i]) continue;
        const std::string prefix = "sample " + std::to_string(i) + ": ";
        try {
            std::rethrow_exception(errors[i]);
        } catch (const ShapeError& e) {
            throw ShapeError(prefix + e.what());
        } catch (const NumericError& e) {
            throw NumericError(prefix + e.what());
        }
    }
    return traces;
}

} // namespace xcnn
