#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <numeric>
#include <span>
#include <vector>

#include "xcnn/network.hpp"

namespace xcnn {

/// Anything with a `Tensor image` and a class `label`.
template <typename T>
concept LabeledSample = requires(const T& s) {
    { s.image } -> std::convertible_to<const Tensor&>;
    { s.label } -> std::convertible_to<std::size_t>;
};

/// Parameter gradients aligned with layer positions; empty for parameter-free layers.
struct Gradients {
    std::vector<Tensor> weights;
    std::vector<Tensor> bias;
};

struct LossResult {
    double loss = 0.0;
    std::size_t predicted = 0;
};

/// Cross-entropy loss of one example and its gradients by backpropagation.
inline LossResult loss_and_gradients(const Network& net, const Tensor& image, std::size_t label, Gradients& grads) {
    if (label >= net.classes()) throw UsageError("label " + std::to_string(label) + " out of class range");
    detail::ForwardCache cache;
    const Tensor probs = detail::run_layers(net, image, &cache, nullptr);
    const double loss = -std::log(std::max(static_cast<double>(probs[label]), 1e-30));

    const std::size_t n = net.size();
    grads.weights.assign(n, Tensor{});
    grads.bias.assign(n, Tensor{});
    Tensor g = probs; // d loss / d logits for softmax + cross-entropy
    g[label] -= 1.0f;
    // The output layer is softmax; its gradient is folded into `g` above.
    for (std::size_t idx = n - 1; idx-- > 0;) {
        const auto& layer = net.layers()[idx];
        const Tensor& input = idx == 0 ? image : cache.outputs[idx - 1];
        const bool need_input_grad = idx > 0;
        switch (kind_of(layer)) {
        case LayerKind::dense: {
            const auto& d = std::get<DenseLayer>(layer);
            const auto out_n = static_cast<Eigen::Index>(d.weights.dim(0));
            const auto in_n = static_cast<Eigen::Index>(d.weights.dim(1));
            Tensor dw(d.weights.shape());
            ops::RowMap(dw.data(), out_n, in_n).noalias() =
                ops::ConstVecMap(g.data(), out_n) * ops::ConstVecMap(input.data(), in_n).transpose();
            grads.weights[idx] = std::move(dw);
            grads.bias[idx] = g;
            if (need_input_grad) {
                Tensor dx(input.shape());
                ops::VecMap(dx.data(), in_n).noalias() =
                    ops::ConstRowMap(d.weights.data(), out_n, in_n).transpose() * ops::ConstVecMap(g.data(), out_n);
                g = std::move(dx);
            }
            break;
        }
        case LayerKind::relu: {
            const Tensor& out = cache.outputs[idx];
            for (std::size_t i = 0; i < g.size(); ++i)
                if (!(out[i] > 0.0f)) g[i] = 0.0f;
            break;
        }
        case LayerKind::flatten: g = g.reshaped(input.shape()); break;
        case LayerKind::maxpool: g = ops::maxpool_backward(g, cache.switches[idx]); break;
        case LayerKind::conv: {
            const auto& c = std::get<ConvLayer>(layer);
            const auto geo = ops::geometry(input.shape(), c.weights, c.stride, c.pad);
            const auto oc = static_cast<Eigen::Index>(c.out_channels);
            const auto k = static_cast<Eigen::Index>(geo.patch_size());
            const auto p = static_cast<Eigen::Index>(geo.positions());
            const ops::ConstRowMap gm(g.data(), oc, p);
            const auto& col = cache.columns[idx];
            Tensor dw(c.weights.shape());
            ops::RowMap(dw.data(), oc, k).noalias() = gm * ops::ConstRowMap(col.data(), k, p).transpose();
            Tensor db(c.bias.shape());
            ops::VecMap(db.data(), oc) = gm.rowwise().sum();
            grads.weights[idx] = std::move(dw);
            grads.bias[idx] = std::move(db);
            if (need_input_grad) g = ops::conv2d_adjoint(g, c.weights, input.shape(), c.stride, c.pad);
            break;
        }
        case LayerKind::output: break;
        }
    }
    const auto pv = probs.values();
    return {loss, static_cast<std::size_t>(std::max_element(pv.begin(), pv.end()) - pv.begin())};
}

/// w -= lr * g for every parameter tensor.
inline void sgd_step(Network& net, const Gradients& grads, float lr) {
    auto update = [lr](Tensor& w, const Tensor& g) {
        for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
    };
    for (std::size_t i = 0; i < net.size(); ++i) {
        auto& layer = net.mutable_layers()[i];
        if (auto* c = std::get_if<ConvLayer>(&layer)) {
            update(c->weights, grads.weights[i]);
            update(c->bias, grads.bias[i]);
        } else if (auto* d = std::get_if<DenseLayer>(&layer)) {
            update(d->weights, grads.weights[i]);
            update(d->bias, grads.bias[i]);
        }
    }
}

template <LabeledSample S>
double accuracy(const Network& net, std::span<const S> data) {
    if (data.empty()) return 0.0;
    std::size_t correct = 0;
    for (const auto& s : data)
        if (forward(net, s.image, false).predicted_class() == static_cast<std::size_t>(s.label)) ++correct;
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

struct TrainConfig {
    std::size_t epochs = 10;
    float learning_rate = 0.01f;
};

struct EpochStats {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double train_accuracy = 0.0; // running, measured before each update
    double validation_accuracy = 0.0;
};

struct TrainResult {
    Network network;
    /// checkpoints[0] is the initial network, checkpoints[e] the state after epoch e.
    std::vector<Network> checkpoints;
    std::vector<EpochStats> history;
};

/// Plain per-example SGD on cross-entropy. The visiting order is reshuffled
/// every epoch from `rng`; the run is a deterministic function of its inputs.
template <LabeledSample S>
TrainResult train(Network net, std::span<const S> data, const TrainConfig& cfg, Rng rng,
                  std::span<const S> validation = {}) {
    if (data.empty()) throw UsageError("train: empty dataset");
    if (!(cfg.learning_rate >= 0.0f) || !std::isfinite(cfg.learning_rate))
        throw UsageError("train: learning rate must be a non-negative finite number");
    for (const auto& s : data)
        if (static_cast<std::size_t>(s.label) >= net.classes()) throw UsageError("train: label out of class range");

    TrainResult result;
    result.checkpoints.push_back(net);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Gradients grads;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t step = 0; step < order.size(); ++step) {
            const auto& s = data[order[step]];
            LossResult r;
            try {
                r = loss_and_gradients(net, s.image, static_cast<std::size_t>(s.label), grads);
            } catch (const NumericError& e) {
                throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(step) + ": " + e.what());
            }
            if (!std::isfinite(r.loss))
                throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(step) + ": non-finite loss");
            loss_sum += r.loss;
            if (r.predicted == static_cast<std::size_t>(s.label)) ++correct;
            sgd_step(net, grads, cfg.learning_rate);
        }
        EpochStats st;
        st.epoch = epoch;
        st.mean_loss = loss_sum / static_cast<double>(order.size());
        st.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
        st.validation_accuracy = accuracy(net, validation);
        result.history.push_back(st);
        result.checkpoints.push_back(net);
    }
    result.network = std::move(net);
    return result;
}

} // namespace xcnn
