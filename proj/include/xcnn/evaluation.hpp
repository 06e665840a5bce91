#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "xcnn/explain.hpp"
#include "xcnn/image_io.hpp"
#include "xcnn/train.hpp"

namespace xcnn {

struct LabeledImage {
    Tensor image;              ///< [3,H,W] in [0,1]
    std::size_t label = 0;     ///< 1 = figure present
    std::optional<Tensor> mask; ///< [H,W], 1 on object pixels
};

// ---------------------------------------------------------------------------
// Synthetic two-class dataset
// ---------------------------------------------------------------------------

namespace detail {

inline void paint(Tensor& img, std::size_t y, std::size_t x, const Rgb& color) {
    for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = color[c];
}

inline Rgb random_color(Rng& rng) {
    return {static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform())};
}

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

} // namespace detail

/// `count` images of size x size, alternating negative/positive labels.
///
/// Backgrounds are a per-image base colour with a linear gradient, a faint
/// oriented stripe texture and per-pixel noise. Negatives carry one to three
/// solid distractor rectangles. Positives carry up to one distractor plus a
/// "figure": a filled vertical ellipse with a bar hanging below it, in a
/// colour that contrasts with the background; their mask marks exactly the
/// figure pixels.
inline std::vector<LabeledImage> generate_dataset(std::size_t count, Rng& rng, std::size_t size = 32) {
    if (count < 2) throw UsageError("generate_dataset: need at least 2 images");
    if (size < 16) throw UsageError("generate_dataset: images must be at least 16 pixels wide");
    std::vector<LabeledImage> out;
    out.reserve(count);
    const double s = static_cast<double>(size);
    for (std::size_t i = 0; i < count; ++i) {
        LabeledImage item;
        item.label = i % 2;
        Tensor img({3, size, size});
        Rgb base;
        for (auto& b : base) b = static_cast<float>(rng.uniform(0.2, 0.7));
        const double gy = rng.uniform(-0.15, 0.15), gx = rng.uniform(-0.15, 0.15);
        const double freq = rng.uniform(0.3, 1.2), angle = rng.uniform(0.0, std::numbers::pi);
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x) {
                const double u = static_cast<double>(y) / s - 0.5, v = static_cast<double>(x) / s - 0.5;
                const double stripe =
                    0.04 * std::sin(freq * (std::cos(angle) * static_cast<double>(x) + std::sin(angle) * static_cast<double>(y)) + phase);
                for (std::size_t c = 0; c < 3; ++c) {
                    const double val = base[c] + gy * u + gx * v + stripe + 0.03 * rng.normal();
                    img.at(c, y, x) = static_cast<float>(std::clamp(val, 0.02, 0.98));
                }
            }

        const std::size_t distractors = item.label ? detail::pick(rng, 0, 1) : detail::pick(rng, 1, 3);
        for (std::size_t d = 0; d < distractors; ++d) {
            const std::size_t h = detail::pick(rng, 3, 10), w = detail::pick(rng, 3, 10);
            const std::size_t top = rng.below(size - h + 1), left = rng.below(size - w + 1);
            const Rgb color = detail::random_color(rng);
            for (std::size_t y = top; y < top + h; ++y)
                for (std::size_t x = left; x < left + w; ++x) detail::paint(img, y, x, color);
        }

        if (item.label == 1) {
            Tensor mask({size, size});
            std::size_t pixels = 0;
            while (pixels < 30) {
                mask = Tensor({size, size});
                pixels = 0;
                const double ry = rng.uniform(4.0, 7.0), rx = rng.uniform(2.5, 4.5);
                const double cy = rng.uniform(ry, s * 0.6), cx = rng.uniform(rx + 1.0, s - rx - 2.0);
                const std::size_t bar_len = detail::pick(rng, 3, 7), bar_w = detail::pick(rng, 2, 3);
                Rgb color;
                double contrast = 0.0;
                do {
                    color = detail::random_color(rng);
                    contrast = (std::abs(color[0] - base[0]) + std::abs(color[1] - base[1]) + std::abs(color[2] - base[2])) / 3.0;
                } while (contrast < 0.25);
                const double bar_top = cy + ry - 1.0;
                const double bar_left = std::round(cx - static_cast<double>(bar_w) / 2.0);
                for (std::size_t y = 0; y < size; ++y)
                    for (std::size_t x = 0; x < size; ++x) {
                        const double dy = (static_cast<double>(y) - cy) / ry, dx = (static_cast<double>(x) - cx) / rx;
                        const bool in_ellipse = dy * dy + dx * dx <= 1.0;
                        const bool in_bar = static_cast<double>(y) >= bar_top &&
                                            static_cast<double>(y) < bar_top + static_cast<double>(bar_len) &&
                                            static_cast<double>(x) >= bar_left &&
                                            static_cast<double>(x) < bar_left + static_cast<double>(bar_w);
                        if (in_ellipse || in_bar) {
                            mask[y * size + x] = 1.0f;
                            ++pixels;
                        }
                    }
                if (pixels >= 30)
                    for (std::size_t k = 0; k < size * size; ++k)
                        if (mask[k] > 0.5f) detail::paint(img, k / size, k % size, color);
            }
            item.mask = std::move(mask);
        }
        // 8-bit quantisation, so a dataset written as PPM reads back bit-identically.
        for (auto& v : img.values()) v = static_cast<float>(std::lround(v * 255.0f)) / 255.0f;
        item.image = std::move(img);
        out.push_back(std::move(item));
    }
    return out;
}

/// Directory layout: labels.tsv ("image<TAB>label<TAB>mask", mask "-" when
/// absent) next to P6 images and P5 masks.
inline void write_dataset(const std::string& dir, std::span<const LabeledImage> data) {
    std::filesystem::create_directories(dir);
    std::ostringstream index;
    index << "image\tlabel\tmask\n";
    for (std::size_t i = 0; i < data.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "img_%05zu", i);
        write_ppm(dir + "/" + name + ".ppm", data[i].image);
        std::string mask_name = "-";
        if (data[i].mask) {
            mask_name = std::string(name) + "_mask.pgm";
            write_pgm(dir + "/" + mask_name, *data[i].mask);
        }
        index << name << ".ppm\t" << data[i].label << '\t' << mask_name << '\n';
    }
    detail::write_file(dir + "/labels.tsv", index.str());
}

inline std::vector<LabeledImage> read_dataset(const std::string& dir) {
    std::istringstream index(detail::read_file(dir + "/labels.tsv"));
    std::string line;
    std::vector<LabeledImage> out;
    std::size_t line_no = 0;
    while (std::getline(index, line)) {
        ++line_no;
        if (line.empty() || line_no == 1) continue;
        std::istringstream parts(line);
        std::string image, label, mask;
        if (!std::getline(parts, image, '\t') || !std::getline(parts, label, '\t') || !std::getline(parts, mask, '\t'))
            throw FormatError("labels.tsv line " + std::to_string(line_no) + ": expected 3 columns");
        LabeledImage item;
        item.image = read_ppm(dir + "/" + image);
        try {
            item.label = std::stoul(label);
        } catch (const std::logic_error&) {
            throw FormatError("labels.tsv line " + std::to_string(line_no) + ": bad label");
        }
        if (mask != "-") {
            Tensor m = read_pgm(dir + "/" + mask);
            for (auto& v : m.values()) v = v > 0.5f ? 1.0f : 0.0f;
            if (m.dim(0) != item.image.dim(1) || m.dim(1) != item.image.dim(2))
                throw FormatError("mask " + mask + " does not match its image size");
            item.mask = std::move(m);
        }
        out.push_back(std::move(item));
    }
    return out;
}

/// Deterministic 80/20 style split: the first `train_fraction` of a seeded permutation trains.
template <typename T>
std::pair<std::vector<T>, std::vector<T>> split(std::span<const T> data, double train_fraction, Rng rng) {
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    const auto cut = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(data.size())));
    std::pair<std::vector<T>, std::vector<T>> out;
    for (std::size_t i = 0; i < order.size(); ++i) (i < cut ? out.first : out.second).push_back(data[order[i]]);
    return out;
}

// ---------------------------------------------------------------------------
// Patch localization
// ---------------------------------------------------------------------------

inline std::size_t mask_overlap(const BoundingBox& b, const Tensor& mask) {
    std::size_t n = 0;
    for (std::size_t y = b.top; y < b.bottom(); ++y)
        for (std::size_t x = b.left; x < b.right(); ++x)
            if (mask[y * mask.dim(1) + x] > 0.5f) ++n;
    return n;
}

/// Fraction of patches whose box covers at least `min_overlap` mask pixels.
inline double patch_localization(std::span<const Patch> patches, const Tensor& mask, std::size_t min_overlap = 1) {
    if (patches.empty()) throw UsageError("patch_localization: no patches");
    if (mask.rank() != 2) throw ShapeError("patch_localization: mask must be [H,W]");
    std::size_t hits = 0;
    for (const auto& p : patches) {
        if (p.bbox.bottom() > mask.dim(0) || p.bbox.right() > mask.dim(1))
            throw ShapeError("patch box exceeds mask extent");
        if (mask_overlap(p.bbox, mask) >= std::max<std::size_t>(1, min_overlap)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(patches.size());
}

/// Keep the first `top` patches of each layer (patches are ordered by layer, rank).
inline std::vector<Patch> top_per_layer(std::span<const Patch> patches, std::size_t top) {
    std::vector<Patch> out;
    for (const auto& p : patches)
        if (p.rank < top) out.push_back(p);
    return out;
}

// ---------------------------------------------------------------------------
// Secondary patch classifier
// ---------------------------------------------------------------------------

struct PatchExample {
    Tensor image; ///< resized patch, [3,16,16]
    std::size_t label = 0;
};

struct PatchDataset {
    Metric metric = Metric::act_sum;
    std::vector<PatchExample> examples;
    std::size_t shortfall = 0;         ///< selections that yielded no patch
    std::vector<std::string> failures; ///< per-image pipeline errors
};

struct PipelineConfig {
    ExplainConfig explain;
    std::size_t patch_size = 16;
};

/// Seed of the perturbation batch for image `index` under master `seed`.
inline std::uint64_t image_seed(std::uint64_t seed, std::size_t index) { return Rng(seed, 0x1000 + index).next_u64(); }

/// Run the pipeline on every image once and collect resized top-N patches
/// per requested metric, labelled with the source image's class.
inline std::map<Metric, PatchDataset> build_patch_datasets(const Network& net, std::span<const LabeledImage> images,
                                                           std::span<const Metric> metrics, const PipelineConfig& cfg) {
    std::map<Metric, PatchDataset> out;
    for (Metric m : metrics) out[m].metric = m;
    for (std::size_t i = 0; i < images.size(); ++i) {
        ExplainConfig ec = cfg.explain;
        ec.perturbation.seed = image_seed(cfg.explain.perturbation.seed, i);
        try {
            const TraceBatch batch = build_trace_batch(net, images[i].image, ec.perturbation, ec.threads);
            for (Metric m : metrics) {
                const auto ex = explain_metric(net, batch, images[i].image, m, ec);
                auto& ds = out[m];
                ds.shortfall += ex.patches.shortfalls.size();
                for (const auto& sel : ex.ranked.per_layer) ds.shortfall += sel.shortfall;
                for (const auto& p : ex.patches.patches)
                    ds.examples.push_back({resize_bilinear(p.pixels, cfg.patch_size, cfg.patch_size), images[i].label});
            }
        } catch (const Error& e) {
            for (Metric m : metrics) out[m].failures.push_back("image " + std::to_string(i) + ": " + e.what());
        }
    }
    return out;
}

inline PatchDataset build_patch_dataset(const Network& net, std::span<const LabeledImage> images, Metric metric,
                                        const PipelineConfig& cfg) {
    const Metric ms[] = {metric};
    return std::move(build_patch_datasets(net, images, ms, cfg)[metric]);
}

struct SecondaryConfig {
    std::size_t epochs = 8;
    float learning_rate = 0.01f;
    double train_fraction = 0.8;
};

struct SecondaryResult {
    double accuracy = 0.0;
    std::size_t train_size = 0;
    std::size_t test_size = 0;
};

/// Train the small patch classifier on a seeded 80/20 split; report held-out accuracy.
inline SecondaryResult train_secondary(std::span<const PatchExample> examples, Rng rng,
                                       const SecondaryConfig& cfg = {}) {
    if (examples.empty()) throw UsageError("train_secondary: empty patch dataset");
    std::size_t positives = 0;
    for (const auto& e : examples) positives += e.label == 1;
    if (positives == 0 || positives == examples.size())
        throw UsageError("train_secondary: patch dataset holds a single class");
    auto [train_set, test_set] = split(examples, cfg.train_fraction, rng.derive(1));
    if (train_set.empty() || test_set.empty()) throw UsageError("train_secondary: split left an empty side");
    Network net = secondary_network(examples.front().image.shape());
    Rng init = rng.derive(2);
    he_initialize(net, init);
    const auto result = train(std::move(net), std::span<const PatchExample>(train_set),
                              TrainConfig{cfg.epochs, cfg.learning_rate}, rng.derive(3));
    return {accuracy(result.network, std::span<const PatchExample>(test_set)), train_set.size(), test_set.size()};
}

// ---------------------------------------------------------------------------
// Convergence study and report
// ---------------------------------------------------------------------------

struct MetricEvaluation {
    Metric metric = Metric::act_sum;
    std::optional<double> localization_top5;
    std::optional<double> localization_top20;
    std::optional<double> secondary_accuracy;
};

struct EpochPoint {
    std::size_t epoch = 0;
    double validation_accuracy = 0.0;
    double mean_jaccard = 0.0; ///< act-out-corr vs act-precision top-5, averaged over probes
    std::vector<MetricEvaluation> metrics;
};

struct EvalReport {
    std::vector<EpochPoint> trajectory;
};

struct StudyConfig {
    PipelineConfig pipeline;
    std::vector<Metric> metrics{kAllMetrics.begin(), kAllMetrics.end()};
    bool localization = true;  ///< top-5/top-20 localization on masked probes
    bool secondary = false;    ///< secondary-classifier accuracy per metric
    SecondaryConfig secondary_config;
    std::uint64_t seed = 0;
};

/// Mean Jaccard(corr top-N, precision top-N) over `probes`.
inline double mean_jaccard(const Network& net, std::span<const LabeledImage> probes, const PipelineConfig& cfg) {
    if (probes.empty()) throw UsageError("mean_jaccard: no probe images");
    double total = 0.0;
    for (std::size_t i = 0; i < probes.size(); ++i) {
        ExplainConfig ec = cfg.explain;
        ec.perturbation.seed = image_seed(cfg.explain.perturbation.seed, i);
        const TraceBatch batch = build_trace_batch(net, probes[i].image, ec.perturbation, ec.threads);
        const auto corr = score_all(net, batch, Metric::act_out_corr, ec.selection);
        const auto prec = score_all(net, batch, Metric::act_precision, ec.selection);
        total += jaccard(rank(corr, Metric::act_out_corr, ec.selection), rank(prec, Metric::act_precision, ec.selection));
    }
    return total / static_cast<double>(probes.size());
}

/// Localization (top-5 and top-20 per layer) for each metric over the masked probes.
inline std::map<Metric, std::pair<double, double>> localization_scores(const Network& net,
                                                                       std::span<const LabeledImage> probes,
                                                                       std::span<const Metric> metrics,
                                                                       const PipelineConfig& cfg) {
    std::map<Metric, std::pair<double, double>> sums;
    std::size_t counted = 0;
    for (std::size_t i = 0; i < probes.size(); ++i) {
        if (!probes[i].mask) continue;
        ExplainConfig ec = cfg.explain;
        ec.perturbation.seed = image_seed(cfg.explain.perturbation.seed, i);
        ec.selection.top = std::max<std::size_t>(20, ec.selection.top);
        const TraceBatch batch = build_trace_batch(net, probes[i].image, ec.perturbation, ec.threads);
        ++counted;
        for (Metric m : metrics) {
            const auto ex = explain_metric(net, batch, probes[i].image, m, ec);
            const auto five = top_per_layer(ex.patches.patches, 5);
            auto& s = sums[m];
            if (!five.empty()) s.first += patch_localization(five, *probes[i].mask);
            if (!ex.patches.patches.empty()) s.second += patch_localization(ex.patches.patches, *probes[i].mask);
        }
    }
    if (counted == 0) throw UsageError("localization needs at least one probe image with a mask");
    for (auto& [m, s] : sums) {
        s.first /= static_cast<double>(counted);
        s.second /= static_cast<double>(counted);
    }
    return sums;
}

/// Evaluate every checkpoint: validation accuracy, corr/precision Jaccard and,
/// when enabled, per-metric localization and secondary-classifier accuracy.
inline EvalReport convergence_study(std::span<const Network> checkpoints, std::span<const LabeledImage> probes,
                                    std::span<const LabeledImage> validation, std::span<const LabeledImage> patch_images,
                                    const StudyConfig& cfg) {
    if (checkpoints.size() < 2) throw UsageError("convergence_study: need at least 2 checkpoints");
    EvalReport report;
    for (std::size_t e = 0; e < checkpoints.size(); ++e) {
        const Network& net = checkpoints[e];
        EpochPoint pt;
        pt.epoch = e;
        pt.validation_accuracy = accuracy(net, validation);
        pt.mean_jaccard = mean_jaccard(net, probes, cfg.pipeline);
        for (Metric m : cfg.metrics) pt.metrics.push_back({m, {}, {}, {}});
        if (cfg.localization && !cfg.metrics.empty()) {
            const auto loc = localization_scores(net, probes, cfg.metrics, cfg.pipeline);
            for (auto& me : pt.metrics) {
                me.localization_top5 = loc.at(me.metric).first;
                me.localization_top20 = loc.at(me.metric).second;
            }
        }
        if (cfg.secondary && !cfg.metrics.empty()) {
            const auto sets = build_patch_datasets(net, patch_images, cfg.metrics, cfg.pipeline);
            for (auto& me : pt.metrics) {
                try {
                    me.secondary_accuracy =
                        train_secondary(sets.at(me.metric).examples, Rng(cfg.seed, 7), cfg.secondary_config).accuracy;
                } catch (const UsageError&) {
                    // single-class or empty patch set: no accuracy for this point
                }
            }
        }
        report.trajectory.push_back(std::move(pt));
    }
    return report;
}

/// Spearman rank correlation (average ranks for ties).
inline double spearman(std::span<const double> x, std::span<const double> y) {
    auto ranks = [](std::span<const double> v) {
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < idx.size();) {
            std::size_t j = i;
            while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    if (x.size() != y.size() || x.size() < 2) throw UsageError("spearman: need two equal-length sequences");
    const auto rx = ranks(x), ry = ranks(y);
    const double mx = sum(std::span<const double>(rx)) / static_cast<double>(rx.size());
    const double my = sum(std::span<const double>(ry)) / static_cast<double>(ry.size());
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    return sxx > 0.0 && syy > 0.0 ? sxy / std::sqrt(sxx * syy) : 0.0;
}

namespace detail {
inline std::string opt(const std::optional<double>& v) { return v ? format_value(*v) : std::string("-"); }
} // namespace detail

inline void write_report_table(std::ostream& os, const EvalReport& report) {
    os << "epoch\tval_acc\tjaccard(corr,precision)\n";
    for (const auto& p : report.trajectory)
        os << p.epoch << '\t' << format_value(p.validation_accuracy) << '\t' << format_value(p.mean_jaccard) << '\n';
    if (report.trajectory.empty()) return;
    os << "\nmetric\tlocalization_top5\tlocalization_top20\tsecondary_accuracy\t(epoch "
       << report.trajectory.back().epoch << ")\n";
    for (const auto& m : report.trajectory.back().metrics)
        os << metric_name(m.metric) << '\t' << detail::opt(m.localization_top5) << '\t'
           << detail::opt(m.localization_top20) << '\t' << detail::opt(m.secondary_accuracy) << '\n';
}

/// One row per (epoch, metric).
inline void write_report_csv(std::ostream& os, const EvalReport& report) {
    os << "epoch,metric,validation_accuracy,jaccard,localization_top5,localization_top20,secondary_accuracy\n";
    for (const auto& p : report.trajectory)
        for (const auto& m : p.metrics)
            os << p.epoch << ',' << metric_name(m.metric) << ',' << format_value(p.validation_accuracy) << ','
               << format_value(p.mean_jaccard) << ',' << detail::opt(m.localization_top5) << ','
               << detail::opt(m.localization_top20) << ',' << detail::opt(m.secondary_accuracy) << '\n';
}

} // namespace xcnn
