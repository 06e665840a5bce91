#pragma once

// Command-line front end: generate, train, explain, evaluate.
//
// Exit status: 0 success, 1 usage error, 2 data/format error, 3 numeric failure.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "xcnn/xcnn.hpp"

namespace xcnn::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

/// Files written by one run, with one-line descriptions; rendered as MANIFEST.txt.
class RunManifest {
public:
    explicit RunManifest(std::string dir) : dir_(std::move(dir)) { std::filesystem::create_directories(dir_); }

    std::string path(const std::string& name) const { return dir_ + "/" + name; }

    void add(const std::string& name, const std::string& what) { entries_[name] = what; }

    void write_text(const std::string& name, const std::string& text, const std::string& what) {
        detail::write_file(path(name), text);
        add(name, what);
    }

    void finish(const std::string& command) {
        std::ostringstream os;
        os << "# xcnn " << command << " output\n";
        for (const auto& [name, what] : entries_) os << name << '\t' << what << '\n';
        detail::write_file(path("MANIFEST.txt"), os.str());
    }

private:
    std::string dir_;
    std::map<std::string, std::string> entries_;
};

inline std::vector<Metric> parse_metrics(const std::vector<std::string>& names) {
    std::vector<Metric> out;
    for (const auto& raw : names) {
        std::stringstream ss(raw);
        std::string name;
        while (std::getline(ss, name, ',')) {
            if (name.empty()) continue;
            if (name == "all") {
                for (Metric m : kAllMetrics)
                    if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
                continue;
            }
            const auto m = parse_metric(name);
            if (!m) throw UsageError("unknown metric '" + name + "'");
            if (std::find(out.begin(), out.end(), *m) == out.end()) out.push_back(*m);
        }
    }
    if (out.empty()) throw UsageError("no metrics selected");
    return out;
}

/// Layer-band colours: layer < first is red, < second green, otherwise blue.
struct Bands {
    ConvIndex green_from = 3;
    ConvIndex blue_from = 6;

    Rgb color(ConvIndex layer) const {
        if (layer < green_from) return {1.0f, 0.0f, 0.0f};
        if (layer < blue_from) return {0.0f, 1.0f, 0.0f};
        return {0.0f, 0.0f, 1.0f};
    }
};

inline Bands parse_bands(const std::string& text) {
    const auto comma = text.find(',');
    if (comma == std::string::npos) throw UsageError("--bands expects two layer indices 'a,b'");
    try {
        Bands b{std::stoul(text.substr(0, comma)), std::stoul(text.substr(comma + 1))};
        if (b.green_from > b.blue_from) throw UsageError("--bands: first edge must not exceed the second");
        return b;
    } catch (const std::logic_error&) {
        throw UsageError("--bands expects two layer indices 'a,b'");
    }
}

inline Tensor annotate(const Tensor& image, std::span<const Patch> patches, const Bands& bands) {
    Tensor out = image;
    for (const auto& p : patches)
        draw_rectangle(out, p.bbox.top, p.bbox.left, p.bbox.height, p.bbox.width, bands.color(p.neuron.layer));
    return out;
}

inline std::string patch_table(std::span<const Patch> patches) {
    std::ostringstream os;
    os << "metric\tlayer\tchannel\trank\ttop\tleft\theight\twidth\n";
    for (const auto& p : patches)
        os << metric_name(p.metric) << '\t' << p.neuron.layer << '\t' << p.neuron.channel << '\t' << p.rank + 1 << '\t'
           << p.bbox.top << '\t' << p.bbox.left << '\t' << p.bbox.height << '\t' << p.bbox.width << '\n';
    return os.str();
}

// ---------------------------------------------------------------------------

struct GenerateOptions {
    std::size_t count = 200;
    std::uint64_t seed = 1;
    std::string out;
};

inline int cmd_generate(const GenerateOptions& o) {
    Rng rng(o.seed);
    const auto data = generate_dataset(o.count, rng);
    write_dataset(o.out, data);
    std::cout << "wrote " << data.size() << " images to " << o.out << '\n';
    return kOk;
}

struct TrainOptions {
    std::string data;
    std::size_t synthetic = 0;
    std::size_t epochs = 30;
    float lr = 0.01f;
    std::uint64_t seed = 1;
    std::string out;
};

inline std::string checkpoint_name(std::size_t epoch) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "ckpt_epoch_%03zu.nnwc", epoch);
    return buf;
}

inline int cmd_train(const TrainOptions& o) {
    if (o.data.empty() == (o.synthetic == 0)) throw UsageError("train needs exactly one of --data or --synthetic");
    RunManifest files(o.out);
    std::vector<LabeledImage> data;
    if (o.synthetic) {
        Rng rng(o.seed, 1);
        data = generate_dataset(o.synthetic, rng);
        write_dataset(files.path("data"), data);
        files.add("data/", "generated training dataset (labels.tsv, P6 images, P5 masks)");
    } else {
        data = read_dataset(o.data);
    }
    if (data.size() < 2) throw UsageError("training needs at least 2 images");
    Network net = reference_network();
    for (const auto& d : data)
        if (d.image.shape() != net.input_shape())
            throw FormatError("image of shape " + shape_str(d.image.shape()) + ", network expects " +
                              shape_str(net.input_shape()));
    auto [train_set, val_set] = split(std::span<const LabeledImage>(data), 0.8, Rng(o.seed, 2));
    Rng init(o.seed, 3);
    he_initialize(net, init);
    const auto result = train(std::move(net), std::span<const LabeledImage>(train_set), TrainConfig{o.epochs, o.lr},
                              Rng(o.seed, 4), std::span<const LabeledImage>(val_set));

    files.write_text("network.manifest", encode_manifest(result.network), "network topology");
    for (std::size_t e = 0; e < result.checkpoints.size(); ++e) {
        save_weights(result.checkpoints[e], files.path(checkpoint_name(e)));
        files.add(checkpoint_name(e), e == 0 ? "initial weights" : "weights after epoch " + std::to_string(e));
    }
    std::ostringstream log;
    log << "epoch\ttrain_acc\tval_acc\n";
    for (const auto& h : result.history) {
        log << h.epoch << '\t' << format_value(h.train_accuracy) << '\t' << format_value(h.validation_accuracy) << '\n';
        std::cout << "epoch " << h.epoch << "  loss " << format_value(h.mean_loss) << "  train "
                  << format_value(h.train_accuracy) << "  val " << format_value(h.validation_accuracy) << '\n';
    }
    files.write_text("train_log.tsv", log.str(), "per-epoch training and validation accuracy");
    files.finish("train");
    return kOk;
}

struct ExplainOptions {
    std::string weights, manifest, image, mask, out;
    std::vector<std::string> metrics{"all"};
    std::size_t n = 50;
    double sigma = 0.1;
    std::size_t top = 5;
    std::string layers = "2..6";
    double eps = 0.1;
    double lambda = 1e-3;
    std::uint64_t seed = 0;
    std::string bands = "3,6";
    unsigned threads = 1;
};

inline int cmd_explain(const ExplainOptions& o) {
    const auto metrics = parse_metrics(o.metrics);
    const Bands bands = parse_bands(o.bands);
    ExplainConfig cfg;
    cfg.perturbation.samples = o.n;
    cfg.perturbation.sigma = o.sigma;
    cfg.perturbation.seed = o.seed;
    cfg.selection.top = o.top;
    cfg.selection.layers = parse_layer_range(o.layers);
    cfg.selection.lambda = o.lambda;
    cfg.eps = o.eps;
    cfg.threads = o.threads;
    if (!(o.eps > 0.0 && o.eps < 1.0)) throw UsageError("--eps must lie in (0, 1)");

    const Network net = load_network(o.manifest, o.weights);
    const Tensor image = read_ppm(o.image);
    std::optional<Tensor> mask;
    if (!o.mask.empty()) {
        mask = read_pgm(o.mask);
        if (mask->dim(0) != image.dim(1) || mask->dim(1) != image.dim(2))
            throw FormatError("mask size does not match the image");
    }
    if (image.shape() != net.input_shape())
        throw FormatError("image " + shape_str(image.shape()) + " does not match network input " +
                          shape_str(net.input_shape()));

    const Explanation ex = explain(net, image, metrics, cfg);
    RunManifest files(o.out);
    std::ostringstream summary;
    summary << "reference_class\t" << ex.batch.reference_class << '\n'
            << "reference_probability\t" << format_value(ex.batch.original.probabilities[ex.batch.reference_class])
            << '\n';
    std::ostringstream loc;
    loc << "metric\tpatches\tlocalization\n";
    for (const auto& me : ex.metrics) {
        const std::string name(metric_name(me.metric));
        std::ostringstream dump, ranked;
        write_score_dump(dump, me.scores);
        write_ranked_set(ranked, me.ranked);
        files.write_text("scores_" + name + ".tsv", dump.str(), "importance scores, " + name);
        files.write_text("ranked_" + name + ".txt", ranked.str(), "top-N neurons per layer, " + name);
        files.write_text("patches_" + name + ".tsv", patch_table(me.patches.patches), "patch boxes, " + name);
        write_ppm(files.path("annotated_" + name + ".ppm"), annotate(image, me.patches.patches, bands));
        files.add("annotated_" + name + ".ppm", "input with patch boxes coloured by layer band, " + name);
        for (const auto& p : me.patches.patches) {
            const std::string file =
                name + "_" + std::to_string(p.neuron.layer) + "_" + std::to_string(p.rank + 1) + ".ppm";
            write_ppm(files.path(file), p.pixels);
            files.add(file, "patch of layer " + std::to_string(p.neuron.layer) + " channel " +
                                std::to_string(p.neuron.channel));
        }
        std::size_t dead = me.patches.shortfalls.size();
        for (const auto& sel : me.ranked.per_layer) dead += sel.shortfall;
        summary << name << "\tpatches=" << me.patches.patches.size() << "\tshortfall=" << dead << '\n';
        if (me.patches.patches.empty())
            std::cerr << "warning: metric " << name << " selected no usable neurons\n";
        if (mask) {
            loc << name << '\t' << me.patches.patches.size() << '\t'
                << (me.patches.patches.empty() ? std::string("-")
                                               : format_value(patch_localization(me.patches.patches, *mask)))
                << '\n';
        }
    }
    files.write_text("summary.tsv", summary.str(), "reference class and per-metric patch counts");
    if (mask) files.write_text("localization.tsv", loc.str(), "fraction of patches overlapping the mask");
    files.finish("explain");
    std::cout << summary.str();
    return kOk;
}

struct EvaluateOptions {
    std::string checkpoints, data, out;
    std::vector<std::string> metrics{"all"};
    std::size_t probes = 8;
    std::size_t patch_images = 0;
    std::size_t n = 50;
    double sigma = 0.1;
    std::size_t top = 5;
    std::string layers = "2..6";
    double eps = 0.1;
    double lambda = 1e-3;
    std::uint64_t seed = 0;
    std::size_t secondary_epochs = 8;
    bool localization = true;
};

inline std::vector<Network> load_checkpoints(const std::string& dir) {
    const Network skeleton = load_manifest(dir + "/network.manifest");
    std::vector<std::string> names;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (name.rfind("ckpt_epoch_", 0) == 0 && entry.path().extension() == ".nnwc") names.push_back(name);
    }
    std::sort(names.begin(), names.end());
    std::vector<Network> out;
    for (const auto& n : names) out.push_back(load_weights(dir + "/" + n, skeleton));
    return out;
}

inline int cmd_evaluate(const EvaluateOptions& o) {
    StudyConfig cfg;
    cfg.metrics = parse_metrics(o.metrics);
    cfg.pipeline.explain.perturbation.samples = o.n;
    cfg.pipeline.explain.perturbation.sigma = o.sigma;
    cfg.pipeline.explain.perturbation.seed = o.seed;
    cfg.pipeline.explain.selection.top = o.top;
    cfg.pipeline.explain.selection.layers = parse_layer_range(o.layers);
    cfg.pipeline.explain.selection.lambda = o.lambda;
    cfg.pipeline.explain.eps = o.eps;
    cfg.localization = o.localization;
    cfg.secondary = o.patch_images > 0;
    cfg.secondary_config.epochs = o.secondary_epochs;
    cfg.seed = o.seed;
    if (o.probes < 1) throw UsageError("--probes must be at least 1");

    const auto checkpoints = load_checkpoints(o.checkpoints);
    if (checkpoints.size() < 2) throw UsageError("need at least 2 checkpoints in " + o.checkpoints);
    const auto data = read_dataset(o.data);
    if (data.size() < o.probes + o.patch_images)
        throw UsageError("dataset holds " + std::to_string(data.size()) + " images; need " +
                         std::to_string(o.probes + o.patch_images));
    const std::span<const LabeledImage> all(data);
    const auto report = convergence_study(checkpoints, all.subspan(0, o.probes), all,
                                          all.subspan(o.probes, o.patch_images), cfg);

    RunManifest files(o.out);
    std::ostringstream table, csv;
    write_report_table(table, report);
    write_report_csv(csv, report);
    files.write_text("report.txt", table.str(), "trajectory and final per-metric table");
    files.write_text("report.csv", csv.str(), "one row per (epoch, metric)");
    files.finish("evaluate");
    std::cout << table.str();
    return kOk;
}

// ---------------------------------------------------------------------------

/// Parse and dispatch; never throws.
inline int run(int argc, const char* const* argv) {
    CLI::App app{"Explain CNN predictions by input resampling, neuron ranking and deconvolution"};
    app.require_subcommand(1);

    GenerateOptions gen;
    auto* g = app.add_subcommand("generate", "Write a synthetic two-class dataset");
    g->add_option("--count", gen.count, "Number of images")->check(CLI::PositiveNumber);
    g->add_option("--seed", gen.seed, "Generator seed");
    g->add_option("--out", gen.out, "Output directory")->required();

    TrainOptions tr;
    auto* t = app.add_subcommand("train", "Train the reference network, one checkpoint per epoch");
    auto* data_opt = t->add_option("--data", tr.data, "Dataset directory (labels.tsv)");
    t->add_option("--synthetic", tr.synthetic, "Generate this many synthetic images instead")->excludes(data_opt);
    t->add_option("--epochs", tr.epochs, "Training epochs");
    t->add_option("--lr", tr.lr, "SGD learning rate")->check(CLI::NonNegativeNumber);
    t->add_option("--seed", tr.seed, "Master seed");
    t->add_option("--out", tr.out, "Output directory")->required();

    ExplainOptions ex;
    auto* e = app.add_subcommand("explain", "Rank neurons for one image and extract their patches");
    e->add_option("--weights", ex.weights, "Weight container")->required();
    e->add_option("--manifest", ex.manifest, "Network manifest")->required();
    e->add_option("--image", ex.image, "Input image (P6)")->required();
    e->add_option("--mask", ex.mask, "Object mask (P5) for localization");
    e->add_option("--metric", ex.metrics, "Metric name(s) or 'all'")->delimiter(',');
    e->add_option("--n", ex.n, "Perturbed samples");
    e->add_option("--sigma", ex.sigma, "Noise standard deviation");
    e->add_option("--top", ex.top, "Neurons per layer");
    e->add_option("--layers", ex.layers, "Conv layer range a..b");
    e->add_option("--eps", ex.eps, "Patch support threshold (fraction of peak)");
    e->add_option("--lambda", ex.lambda, "Precision activation threshold");
    e->add_option("--seed", ex.seed, "Perturbation seed");
    e->add_option("--bands", ex.bands, "Layer band edges 'a,b' for red/green/blue boxes");
    e->add_option("--threads", ex.threads, "Worker threads for the batch forward pass");
    e->add_option("--out", ex.out, "Output directory")->required();

    EvaluateOptions ev;
    auto* v = app.add_subcommand("evaluate", "Convergence, localization and secondary-classifier study");
    v->add_option("--checkpoints", ev.checkpoints, "Directory from 'train'")->required();
    v->add_option("--data", ev.data, "Dataset directory")->required();
    v->add_option("--metrics", ev.metrics, "Metric name(s) or 'all'")->delimiter(',');
    v->add_option("--probes", ev.probes, "Probe images for Jaccard/localization");
    v->add_option("--patch-images", ev.patch_images, "Images for the secondary classifier (0 disables)");
    v->add_option("--n", ev.n, "Perturbed samples");
    v->add_option("--sigma", ev.sigma, "Noise standard deviation");
    v->add_option("--top", ev.top, "Neurons per layer");
    v->add_option("--layers", ev.layers, "Conv layer range a..b");
    v->add_option("--eps", ev.eps, "Patch support threshold");
    v->add_option("--lambda", ev.lambda, "Precision activation threshold");
    v->add_option("--seed", ev.seed, "Seed");
    v->add_option("--secondary-epochs", ev.secondary_epochs, "Secondary classifier epochs");
    v->add_flag("!--no-localization", ev.localization, "Skip localization scoring");
    v->add_option("--out", ev.out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        return app.exit(err) == 0 ? kOk : kUsage;
    }

    try {
        if (g->parsed()) return cmd_generate(gen);
        if (t->parsed()) return cmd_train(tr);
        if (e->parsed()) return cmd_explain(ex);
        if (v->parsed()) return cmd_evaluate(ev);
    } catch (const UsageError& err) {
        std::cerr << "usage error: " << err.what() << '\n';
        return kUsage;
    } catch (const NumericError& err) {
        std::cerr << "numeric failure: " << err.what() << '\n';
        return kNumeric;
    } catch (const Error& err) {
        std::cerr << "data error: " << err.what() << '\n';
        return kData;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return kData;
    }
    return kUsage;
}

inline int run(const std::vector<std::string>& args) {
    std::vector<const char*> argv{"xcnn"};
    for (const auto& a : args) argv.push_back(a.c_str());
    return run(static_cast<int>(argv.size()), argv.data());
}

} // namespace xcnn::cli
