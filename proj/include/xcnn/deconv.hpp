#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "xcnn/importance.hpp"
#include "xcnn/network.hpp"

namespace xcnn {

/// Input-pixel bounding box: rows [top, top+height), cols [left, left+width).
struct BoundingBox {
    std::size_t top = 0, left = 0, height = 0, width = 0;

    std::size_t bottom() const { return top + height; }
    std::size_t right() const { return left + width; }
    bool contains(const BoundingBox& o) const {
        return o.top >= top && o.left >= left && o.bottom() <= bottom() && o.right() <= right();
    }
    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct Patch {
    NeuronId neuron;
    Metric metric = Metric::act_sum;
    std::size_t rank = 0; ///< 0-based position within its layer's selection
    BoundingBox bbox;
    Tensor pixels;         ///< crop of the original image, [C,h,w]
    Tensor reconstruction; ///< crop of the deconvolution output, [C,h,w]
    std::size_t sample_id = 0;
};

/// Reverse a (possibly overlapping) max-pool: every pooled value goes back to its switch cell.
using ops::unpool;

/// Project one neuron back to pixel space.
///
/// Layer l's recorded activation, with every channel but `neuron.channel`
/// zeroed, is walked down to the input: maxpool layers unpool through the
/// trace's switches, relu layers rectify, conv layers filter with the
/// transposed kernels (no bias).
inline Tensor deconvolve(const Network& net, const ActivationTrace& trace, NeuronId neuron) {
    if (!trace.recorded()) throw UsageError("deconvolve: trace was recorded without activations");
    const std::size_t start = net.activation_position(neuron.layer);
    const Tensor& act = trace.activation(neuron.layer);
    if (neuron.channel >= act.dim(0))
        throw UsageError("deconvolve: channel " + std::to_string(neuron.channel) + " out of range");

    Tensor signal(act.shape());
    const auto src = act.slice(neuron.channel);
    std::copy(src.begin(), src.end(), signal.slice(neuron.channel).begin());

    for (std::size_t i = start + 1; i-- > 0;) {
        const auto& layer = net.layers()[i];
        switch (kind_of(layer)) {
        case LayerKind::maxpool: {
            if (i >= trace.switches.size() || trace.switches[i].empty())
                throw UsageError("deconvolve: missing switches for pooling layer " + std::to_string(i));
            signal = ops::unpool(signal, trace.switches[i]);
            break;
        }
        case LayerKind::relu: signal = ops::relu(std::move(signal)); break;
        case LayerKind::conv: {
            const auto& c = std::get<ConvLayer>(layer);
            signal = ops::conv2d_adjoint(signal, c.weights, net.input_shape_of(i), c.stride, c.pad);
            break;
        }
        default: throw UsageError("deconvolve: unexpected non-spatial layer below a conv layer");
        }
    }
    return signal;
}

/// Tight box around pixels whose max-over-channels |reconstruction| reaches
/// eps times the global maximum. Throws DeadPathError on an all-zero input.
inline BoundingBox support_box(const Tensor& reconstruction, double eps) {
    if (!(eps > 0.0 && eps < 1.0)) throw UsageError("eps must lie in (0, 1)");
    const std::size_t ch = reconstruction.dim(0), h = reconstruction.dim(1), w = reconstruction.dim(2);
    std::vector<float> mag(h * w, 0.0f);
    for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t k = 0; k < h * w; ++k) mag[k] = std::max(mag[k], std::abs(reconstruction[c * h * w + k]));
    const float peak = *std::max_element(mag.begin(), mag.end());
    if (!(peak > 0.0f)) throw DeadPathError("deconvolution reconstruction is identically zero");
    const double threshold = eps * static_cast<double>(peak);
    std::size_t top = h, left = w, bottom = 0, right = 0;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            if (static_cast<double>(mag[y * w + x]) >= threshold) {
                top = std::min(top, y);
                left = std::min(left, x);
                bottom = std::max(bottom, y + 1);
                right = std::max(right, x + 1);
            }
    return {top, left, bottom - top, right - left};
}

inline Tensor crop(const Tensor& image, const BoundingBox& b) {
    const std::size_t ch = image.dim(0);
    if (b.bottom() > image.dim(1) || b.right() > image.dim(2) || b.height == 0 || b.width == 0)
        throw ShapeError("crop box outside image");
    Tensor out({ch, b.height, b.width});
    for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t y = 0; y < b.height; ++y)
            for (std::size_t x = 0; x < b.width; ++x) out.at(c, y, x) = image.at(c, b.top + y, b.left + x);
    return out;
}

inline Patch extract_patch(const Tensor& image, const Tensor& reconstruction, NeuronId neuron, double eps = 0.1) {
    if (reconstruction.rank() != 3 || reconstruction.dim(1) != image.dim(1) || reconstruction.dim(2) != image.dim(2))
        throw ShapeError("reconstruction " + shape_str(reconstruction.shape()) + " does not match image " +
                         shape_str(image.shape()));
    Patch p;
    p.neuron = neuron;
    p.bbox = support_box(reconstruction, eps);
    p.pixels = crop(image, p.bbox);
    p.reconstruction = crop(reconstruction, p.bbox);
    return p;
}

struct PatchShortfall {
    NeuronId neuron;
    std::string reason;
};

struct PatchSet {
    std::vector<Patch> patches; ///< ordered by (layer, rank)
    std::vector<PatchShortfall> shortfalls;
};

/// One patch per selected neuron, each deconvolved from the query image's
/// own trace. Dead reconstructions are recorded, not thrown.
inline PatchSet extract_top_patches(const Network& net, const ActivationTrace& original, const RankedSet& ranked,
                                    const Tensor& image, double eps = 0.1) {
    if (ranked.per_layer.empty()) throw UsageError("extract_top_patches: empty ranked set");
    PatchSet out;
    for (const auto& sel : ranked.per_layer) {
        for (std::size_t r = 0; r < sel.neurons.size(); ++r) {
            const NeuronId n = sel.neurons[r];
            try {
                Patch p = extract_patch(image, deconvolve(net, original, n), n, eps);
                p.metric = ranked.metric;
                p.rank = r;
                p.sample_id = original.sample_id;
                out.patches.push_back(std::move(p));
            } catch (const DeadPathError& e) {
                out.shortfalls.push_back({n, e.what()});
            }
        }
    }
    return out;
}

} // namespace xcnn
