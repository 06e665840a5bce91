#pragma once

#include <vector>

#include "xcnn/deconv.hpp"
#include "xcnn/importance.hpp"
#include "xcnn/network.hpp"
#include "xcnn/perturbation.hpp"

namespace xcnn {

struct ExplainConfig {
    PerturbationConfig perturbation;
    PrecisionConfig selection;
    double eps = 0.1;
    unsigned threads = 1;
};

/// Forward the query image and its perturbation batch, recording everything.
inline TraceBatch build_trace_batch(const Network& net, const Tensor& image, const PerturbationConfig& cfg,
                                    unsigned threads = 1) {
    TraceBatch batch;
    batch.original = forward(net, image, true);
    batch.reference_class = batch.original.predicted_class();
    batch.samples = forward_batch(net, perturb_batch(image, cfg), true, threads);
    return batch;
}

struct MetricExplanation {
    Metric metric = Metric::act_sum;
    std::vector<ImportanceScore> scores;
    RankedSet ranked;
    PatchSet patches;
};

struct Explanation {
    TraceBatch batch;
    std::vector<MetricExplanation> metrics;
};

/// Score, rank and patch one metric over an existing trace batch.
inline MetricExplanation explain_metric(const Network& net, const TraceBatch& batch, const Tensor& image, Metric m,
                                        const ExplainConfig& cfg) {
    MetricExplanation out;
    out.metric = m;
    out.scores = score_all(net, batch, m, cfg.selection);
    out.ranked = rank(out.scores, m, cfg.selection);
    out.patches = extract_top_patches(net, batch.original, out.ranked, image, cfg.eps);
    return out;
}

/// Resample, rank under each metric and extract the top patches.
inline Explanation explain(const Network& net, const Tensor& image, std::span<const Metric> metrics,
                           const ExplainConfig& cfg) {
    cfg.selection.validate(net);
    cfg.perturbation.validate();
    if (metrics.empty()) throw UsageError("explain: no metrics requested");
    Explanation out;
    out.batch = build_trace_batch(net, image, cfg.perturbation, cfg.threads);
    for (Metric m : metrics) out.metrics.push_back(explain_metric(net, out.batch, image, m, cfg));
    return out;
}

} // namespace xcnn
