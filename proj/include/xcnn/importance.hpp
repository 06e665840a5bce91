#pragma once

#include <algorithm>
#include <array>
#include <compare>
#include <cstdio>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "xcnn/network.hpp"
#include "xcnn/stats.hpp"

namespace xcnn {

enum class Metric : std::uint8_t { act_sum, act_var, weight_sum, weight_var, act_out_corr, act_precision };

inline constexpr std::array<Metric, 6> kAllMetrics{Metric::act_sum,    Metric::act_var,      Metric::weight_sum,
                                                   Metric::weight_var, Metric::act_out_corr, Metric::act_precision};

inline constexpr std::string_view metric_name(Metric m) {
    switch (m) {
    case Metric::act_sum: return "act-sum";
    case Metric::act_var: return "act-var";
    case Metric::weight_sum: return "weight-sum";
    case Metric::weight_var: return "weight-var";
    case Metric::act_out_corr: return "act-out-corr";
    case Metric::act_precision: return "act-precision";
    }
    return "?";
}

inline std::optional<Metric> parse_metric(std::string_view name) {
    for (Metric m : kAllMetrics)
        if (metric_name(m) == name) return m;
    return std::nullopt;
}

/// One conv output channel.
struct NeuronId {
    ConvIndex layer = 1;
    std::size_t channel = 0;
    friend auto operator<=>(const NeuronId&, const NeuronId&) = default;
};

struct ImportanceScore {
    NeuronId neuron;
    Metric metric = Metric::act_sum;
    double value = 0.0;
    bool degenerate = false;
};

/// Degenerate correlation scores still rank (as 0, i.e. last); every other
/// degenerate score is excluded from ranking.
inline bool rankable(const ImportanceScore& s) { return !s.degenerate || s.metric == Metric::act_out_corr; }

/// Inclusive range of 1-based conv layer indices.
struct LayerRange {
    ConvIndex first = 2;
    ConvIndex last = 6;
    bool contains(ConvIndex l) const { return l >= first && l <= last; }
    bool empty() const { return first > last; }
    friend bool operator==(const LayerRange&, const LayerRange&) = default;
};

/// Parses "a..b" (or a single "a").
inline LayerRange parse_layer_range(std::string_view text) {
    auto to_num = [&](std::string_view s) -> std::size_t {
        if (s.empty() || s.find_first_not_of("0123456789") != std::string_view::npos)
            throw UsageError("bad layer range '" + std::string(text) + "'");
        return std::stoul(std::string(s));
    };
    const auto dots = text.find("..");
    if (dots == std::string_view::npos) {
        const auto l = to_num(text);
        return {l, l};
    }
    return {to_num(text.substr(0, dots)), to_num(text.substr(dots + 2))};
}

struct PrecisionConfig {
    double lambda = 1e-3; ///< discard neurons whose mean |activation| is below this
    std::size_t top = 5;
    LayerRange layers{2, 6};

    void validate(const Network& net) const {
        if (!(lambda >= 0.0)) throw UsageError("lambda must be non-negative");
        if (top < 1) throw UsageError("top-N must be at least 1");
        if (layers.empty()) throw UsageError("empty layer range");
        if (layers.first < 1 || layers.last > net.conv_count())
            throw UsageError("layer range " + std::to_string(layers.first) + ".." + std::to_string(layers.last) +
                             " outside conv layers 1.." + std::to_string(net.conv_count()));
    }
};

/// Reciprocal used for cells whose across-batch variance is (numerically) zero.
inline constexpr double kPrecisionCap = 1e12;

/// Traces of the query image and of its perturbation batch.
struct TraceBatch {
    ActivationTrace original;
    std::vector<ActivationTrace> samples;
    /// Class predicted for the original image; o_i is its probability in sample i.
    std::size_t reference_class = 0;

    std::vector<double> outputs() const {
        std::vector<double> o;
        o.reserve(samples.size());
        for (const auto& s : samples) o.push_back(static_cast<double>(s.probabilities[reference_class]));
        return o;
    }
};

namespace detail {

inline std::span<const float> feature_map(const ActivationTrace& trace, NeuronId n) {
    if (n.layer < 1 || n.layer > trace.conv_activations.size())
        throw UsageError("neuron layer " + std::to_string(n.layer) + " not recorded in trace");
    const Tensor& z = trace.activation(n.layer);
    if (n.channel >= z.dim(0)) throw UsageError("neuron channel " + std::to_string(n.channel) + " out of range");
    return z.slice(n.channel);
}

/// w^{l+1}[:, channel, :, :] flattened, or nullopt when layer l is the last conv.
inline std::optional<std::vector<float>> outgoing_weights(const Network& net, NeuronId n) {
    if (n.channel >= net.channels(n.layer)) throw UsageError("neuron channel out of range");
    if (n.layer + 1 > net.conv_count()) return std::nullopt;
    const Tensor& w = net.conv(n.layer + 1).weights;
    const std::size_t out = w.dim(0), in = w.dim(1), kk = w.dim(2) * w.dim(3);
    std::vector<float> slice;
    slice.reserve(out * kk);
    for (std::size_t o = 0; o < out; ++o) {
        const float* p = w.data() + (o * in + n.channel) * kk;
        slice.insert(slice.end(), p, p + kk);
    }
    return slice;
}

} // namespace detail

/// Sum of the neuron's feature map on the query image.
inline ImportanceScore score_act_sum(const TraceBatch& batch, NeuronId n) {
    return {n, Metric::act_sum, sum(detail::feature_map(batch.original, n)), false};
}

/// Population variance of the neuron's feature map on the query image.
inline ImportanceScore score_act_var(const TraceBatch& batch, NeuronId n) {
    return {n, Metric::act_var, variance(detail::feature_map(batch.original, n)), false};
}

inline ImportanceScore score_weight_sum(const Network& net, NeuronId n) {
    const auto w = detail::outgoing_weights(net, n);
    if (!w) return {n, Metric::weight_sum, 0.0, true};
    return {n, Metric::weight_sum, sum(std::span<const float>(*w)), false};
}

inline ImportanceScore score_weight_var(const Network& net, NeuronId n) {
    const auto w = detail::outgoing_weights(net, n);
    if (!w) return {n, Metric::weight_var, 0.0, true};
    return {n, Metric::weight_var, variance(std::span<const float>(*w)), false};
}

/// |Pearson r| between the per-sample feature-map sum and the reference-class
/// probability over the perturbation batch.
inline ImportanceScore score_correlation(const TraceBatch& batch, NeuronId n) {
    if (batch.samples.size() < 2) throw UsageError("correlation needs at least 2 perturbed samples");
    std::vector<double> s;
    s.reserve(batch.samples.size());
    for (const auto& t : batch.samples) s.push_back(sum(detail::feature_map(t, n)));
    const auto o = batch.outputs();
    const auto r = pearson_abs(std::span<const double>(s), std::span<const double>(o));
    if (!r) return {n, Metric::act_out_corr, 0.0, true};
    return {n, Metric::act_out_corr, *r, false};
}

/// Mean over cells of 1 / Var_i(z[r][c]) across the batch. Cells with variance
/// below 1e-12 contribute kPrecisionCap; neurons whose mean |z| over batch and
/// cells is below lambda are degenerate.
inline ImportanceScore score_precision(const TraceBatch& batch, NeuronId n, const PrecisionConfig& cfg) {
    const std::size_t count = batch.samples.size();
    if (count < 2) throw UsageError("precision needs at least 2 perturbed samples");
    std::vector<std::span<const float>> maps;
    maps.reserve(count);
    for (const auto& t : batch.samples) maps.push_back(detail::feature_map(t, n));
    const std::size_t cells = maps.front().size();

    double magnitude = 0.0;
    for (const auto& m : maps)
        for (float v : m) magnitude += std::abs(static_cast<double>(v));
    magnitude /= static_cast<double>(count * cells);
    if (magnitude < cfg.lambda) return {n, Metric::act_precision, 0.0, true};

    std::vector<double> column(count);
    double total = 0.0;
    for (std::size_t c = 0; c < cells; ++c) {
        for (std::size_t i = 0; i < count; ++i) column[i] = maps[i][c];
        const double var = variance(std::span<const double>(column));
        total += var < 1e-12 ? kPrecisionCap : std::min(kPrecisionCap, 1.0 / var);
    }
    return {n, Metric::act_precision, total / static_cast<double>(cells), false};
}

inline ImportanceScore score(const Network& net, const TraceBatch& batch, Metric m, NeuronId n,
                             const PrecisionConfig& cfg) {
    switch (m) {
    case Metric::act_sum: return score_act_sum(batch, n);
    case Metric::act_var: return score_act_var(batch, n);
    case Metric::weight_sum: return score_weight_sum(net, n);
    case Metric::weight_var: return score_weight_var(net, n);
    case Metric::act_out_corr: return score_correlation(batch, n);
    case Metric::act_precision: return score_precision(batch, n, cfg);
    }
    throw UsageError("unknown metric");
}

/// Every neuron of every layer in `cfg.layers`, in (layer, channel) order.
inline std::vector<ImportanceScore> score_all(const Network& net, const TraceBatch& batch, Metric m,
                                              const PrecisionConfig& cfg) {
    cfg.validate(net);
    std::vector<ImportanceScore> out;
    for (ConvIndex l = cfg.layers.first; l <= cfg.layers.last; ++l)
        for (std::size_t c = 0; c < net.channels(l); ++c) out.push_back(score(net, batch, m, {l, c}, cfg));
    return out;
}

struct LayerSelection {
    ConvIndex layer = 0;
    std::vector<NeuronId> neurons; ///< best first
    std::size_t shortfall = 0;     ///< N minus the number of rankable neurons, when positive
    friend bool operator==(const LayerSelection&, const LayerSelection&) = default;
};

/// Top-N neurons per layer under one metric.
struct RankedSet {
    Metric metric = Metric::act_sum;
    LayerRange layers;
    std::size_t top = 5;
    std::vector<LayerSelection> per_layer;

    std::size_t size() const {
        std::size_t n = 0;
        for (const auto& s : per_layer) n += s.neurons.size();
        return n;
    }
    friend bool operator==(const RankedSet&, const RankedSet&) = default;
};

/// Descending value, then ascending channel; unrankable scores last.
inline bool ranks_before(const ImportanceScore& a, const ImportanceScore& b) {
    const bool ra = rankable(a), rb = rankable(b);
    if (ra != rb) return ra;
    const double va = a.degenerate ? 0.0 : a.value, vb = b.degenerate ? 0.0 : b.value;
    if (va != vb) return va > vb;
    return a.neuron.channel < b.neuron.channel;
}

inline RankedSet rank(std::span<const ImportanceScore> scores, Metric m, const PrecisionConfig& cfg) {
    if (cfg.layers.empty()) throw UsageError("rank: empty layer range");
    if (cfg.top < 1) throw UsageError("rank: top-N must be at least 1");
    RankedSet out{m, cfg.layers, cfg.top, {}};
    for (ConvIndex l = cfg.layers.first; l <= cfg.layers.last; ++l) {
        std::vector<ImportanceScore> layer;
        for (const auto& s : scores)
            if (s.metric == m && s.neuron.layer == l && rankable(s)) layer.push_back(s);
        std::sort(layer.begin(), layer.end(), ranks_before);
        LayerSelection sel{l, {}, 0};
        for (std::size_t i = 0; i < std::min(cfg.top, layer.size()); ++i) sel.neurons.push_back(layer[i].neuron);
        if (layer.size() < cfg.top) sel.shortfall = cfg.top - layer.size();
        out.per_layer.push_back(std::move(sel));
    }
    return out;
}

/// |A n B| / |A u B| over layer-tagged neurons of all layers; 1 when both are empty.
inline double jaccard(const RankedSet& a, const RankedSet& b) {
    if (!(a.layers == b.layers)) throw UsageError("jaccard: ranked sets cover different layer ranges");
    std::set<NeuronId> sa, sb;
    for (const auto& s : a.per_layer) sa.insert(s.neurons.begin(), s.neurons.end());
    for (const auto& s : b.per_layer) sb.insert(s.neurons.begin(), s.neurons.end());
    if (sa.empty() && sb.empty()) return 1.0;
    std::size_t inter = 0;
    for (const auto& n : sa) inter += sb.count(n);
    const std::size_t uni = sa.size() + sb.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

inline std::string format_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

/// Tab-separated dump: layer, channel, metric, value, degenerate; sorted by
/// (metric, layer, rank).
inline void write_score_dump(std::ostream& os, std::span<const ImportanceScore> scores) {
    std::vector<ImportanceScore> sorted(scores.begin(), scores.end());
    std::sort(sorted.begin(), sorted.end(), [](const ImportanceScore& a, const ImportanceScore& b) {
        if (a.metric != b.metric) return a.metric < b.metric;
        if (a.neuron.layer != b.neuron.layer) return a.neuron.layer < b.neuron.layer;
        return ranks_before(a, b);
    });
    os << "layer\tchannel\tmetric\tvalue\tdegenerate\n";
    for (const auto& s : sorted)
        os << s.neuron.layer << '\t' << s.neuron.channel << '\t' << metric_name(s.metric) << '\t'
           << format_value(s.value) << '\t' << (s.degenerate ? 1 : 0) << '\n';
}

inline void write_ranked_set(std::ostream& os, const RankedSet& set) {
    os << "# metric=" << metric_name(set.metric) << " layers=" << set.layers.first << ".." << set.layers.last
       << " top=" << set.top << '\n';
    for (const auto& sel : set.per_layer) {
        os << "layer " << sel.layer << ':';
        for (const auto& n : sel.neurons) os << ' ' << n.channel;
        if (sel.shortfall) os << "  (shortfall " << sel.shortfall << ')';
        os << '\n';
    }
}

} // namespace xcnn
