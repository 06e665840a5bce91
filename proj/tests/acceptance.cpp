// Acceptance suite: one PASS/FAIL line per criterion A1..A7 on stdout,
// progress on stderr. Exit status is 0 only when every criterion passes.

#include <chrono>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "checks.hpp"
#include "xcnn/cli.hpp"

using namespace xcnn;
namespace fs = std::filesystem;

namespace {

// A1
constexpr int kAdjointConfigs = 100;
constexpr double kAdjointTolerance = 1e-4;
constexpr int kStatInputs = 100;
constexpr double kStatTolerance = 1e-9;
constexpr int kGradientSeeds = 20;
constexpr double kGradientTolerance = 1e-2;
constexpr double kA1Seconds = 30.0;
// A2
constexpr int kPropertyCases = 200;
constexpr double kA2Seconds = 60.0;
// A3
constexpr std::size_t kTrainImages = 2000;
constexpr std::size_t kTrainEpochs = 30;
constexpr std::uint64_t kTrainSeed = 1;
constexpr std::size_t kProbes = 8;
constexpr double kMinSpearman = 0.3;
constexpr double kMinJaccardGain = 0.1;
constexpr double kMinValidationAccuracy = 0.90;
// A4
constexpr std::size_t kPatchImages = 40;
constexpr std::size_t kEarlyEpochs = 5;
constexpr double kMinPrecisionAccuracy = 0.75;
constexpr int kA4Seeds = 3;
// A5
constexpr std::size_t kLocalizationImages = 20;
constexpr double kBaselineSlack = 0.05;
constexpr double kMinLocalization = 0.7;
// A7
constexpr int kReshuffles = 10;
constexpr double kChance = 0.5;
constexpr double kChanceBand = 0.15;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string num(double v, int precision = 4) {
    std::ostringstream os;
    os.precision(precision);
    os << v;
    return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void progress(const std::string& msg) { std::cerr << "[acceptance] " << msg << std::endl; }

std::map<std::string, std::string> directory_bytes(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = detail::read_file(e.path().string());
    return out;
}

// ---------------------------------------------------------------------------

Outcome a1_numerics() {
    const auto start = std::chrono::steady_clock::now();
    const double adjoint = checks::worst_adjoint_error(42, kAdjointConfigs);

    Rng rng(0xA1);
    double pearson_err = 0.0, variance_err = 0.0;
    for (int k = 0; k < kStatInputs; ++k) {
        const std::size_t n = 2 + rng.below(200);
        const double scale = std::pow(10.0, rng.uniform(-3.0, 3.0)), shift = rng.uniform(-10.0, 10.0);
        std::vector<float> z(n);
        std::vector<double> x(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            z[i] = static_cast<float>(shift + scale * rng.uniform(-1.0, 1.0));
            x[i] = rng.uniform(-1.0, 1.0);
            y[i] = 0.5 * x[i] + rng.uniform(-1.0, 1.0);
        }
        const double v = variance(std::span<const float>(z));
        const double v_ref = oracle::two_pass_variance(z);
        variance_err = std::max(variance_err, std::abs(v - v_ref) / std::max(1.0, v_ref));
        const auto r = pearson_abs(std::span<const double>(x), std::span<const double>(y));
        pearson_err = std::max(pearson_err, std::abs(r.value_or(-1.0) - std::abs(oracle::two_pass_pearson(x, y))));
    }

    double gradient = 0.0;
    for (int s = 0; s < kGradientSeeds; ++s) gradient = std::max(gradient, checks::worst_gradient_error(s));
    const double elapsed = seconds_since(start);

    const bool pass = adjoint < kAdjointTolerance && pearson_err <= kStatTolerance && variance_err <= kStatTolerance &&
                      gradient < kGradientTolerance && elapsed < kA1Seconds;
    return {pass, "adjoint " + num(adjoint) + " (<" + num(kAdjointTolerance) + "), pearson " + num(pearson_err) +
                      ", variance " + num(variance_err) + " (<=" + num(kStatTolerance) + "), gradient " + num(gradient) +
                      " (<" + num(kGradientTolerance) + "), " + num(elapsed, 3) + " s (<" + num(kA1Seconds) + ")"};
}

// ---------------------------------------------------------------------------

RankedSet channel_set(const std::vector<std::size_t>& channels) {
    RankedSet s{Metric::act_sum, {1, 1}, 5, {LayerSelection{1, {}, 0}}};
    for (auto c : channels) s.per_layer[0].neurons.push_back({1, c});
    return s;
}

Outcome a2_properties() {
    const auto start = std::chrono::steady_clock::now();
    Rng rng(0xA2);
    std::map<std::string, int> violations{{"switch", 0}, {"unpool", 0}, {"bbox", 0}, {"rank", 0}, {"jaccard", 0}};

    for (int k = 0; k < kPropertyCases; ++k) {
        // Switches point at the first row-major maximum of their window.
        const std::size_t window = 2 + rng.below(2), stride = 1 + rng.below(3);
        Tensor x = checks::random_tensor(rng, {1 + rng.below(3), window + rng.below(8), window + rng.below(8)});
        if (k % 4 == 0)
            for (auto& v : x.values()) v = std::round(v);
        ops::Switches sw;
        const Tensor p = ops::maxpool(x, window, stride, sw);
        const auto brute = checks::brute_pool(x, window, stride);
        for (std::size_t i = 0; i < p.size(); ++i)
            violations["switch"] += x[sw.index[i]] != p[i] || p[i] != brute[i].value || sw.index[i] != brute[i].flat;

        // Unpooling is supported only on switch positions and carries the pooled value.
        const Tensor y = checks::random_tensor(rng, {2, 8, 8});
        ops::Switches sy;
        const Tensor py = ops::maxpool(y, 2, 2, sy);
        const Tensor u = ops::unpool(py, sy);
        const auto by = checks::brute_pool(y, 2, 2);
        std::size_t nonzero = 0;
        for (std::size_t i = 0; i < u.size(); ++i) {
            if (u[i] == 0.0f) continue;
            ++nonzero;
            const auto it = std::find_if(by.begin(), by.end(), [&](const auto& c) { return c.flat == i; });
            violations["unpool"] += it == by.end() || it->value != u[i];
        }
        violations["unpool"] += nonzero > py.size();

        // The support box only shrinks as eps grows.
        Tensor rec = checks::random_tensor(rng, {3, 16, 16});
        if (k % 2) rec = checks::gaussian_bump(16, rng.uniform(0, 15), rng.uniform(0, 15), rng.uniform(0.5, 4.0));
        const double e1 = rng.uniform(0.01, 0.98), e2 = rng.uniform(e1, 0.99);
        violations["bbox"] += !support_box(rec, e1).contains(support_box(rec, e2)) ||
                              support_box(rec, e1) != checks::scan_box(rec, e1);

        // Ranking equals the prefix of a full sort and ignores input order.
        auto scores = checks::random_scores(rng, Metric::act_var, 2, 4, 64, k % 2 == 1);
        PrecisionConfig cfg;
        cfg.layers = {2, 4};
        const auto r = rank(scores, Metric::act_var, cfg);
        for (const auto& sel : r.per_layer) {
            std::vector<ImportanceScore> layer;
            for (const auto& s : scores)
                if (s.neuron.layer == sel.layer) layer.push_back(s);
            violations["rank"] += sel.neurons != checks::sort_prefix(layer, cfg.top);
        }
        for (std::size_t i = scores.size(); i > 1; --i) std::swap(scores[i - 1], scores[rng.below(i)]);
        violations["rank"] += !(rank(scores, Metric::act_var, cfg) == r);

        // Jaccard: symmetric, bounded, 1 exactly on equal sets.
        std::vector<std::size_t> a, b;
        for (std::size_t c = 0; c < 12; ++c) {
            if (rng.below(3) == 0) a.push_back(c);
            if (rng.below(3) == 0) b.push_back(c);
        }
        const double j = jaccard(channel_set(a), channel_set(b));
        violations["jaccard"] += j != jaccard(channel_set(b), channel_set(a)) || j < 0.0 || j > 1.0 || (j == 1.0) != (a == b);
    }
    const double elapsed = seconds_since(start);

    int total = 0;
    std::string detail;
    for (const auto& [name, n] : violations) {
        total += n;
        detail += name + " " + std::to_string(n) + ", ";
    }
    return {total == 0 && elapsed < kA2Seconds,
            std::to_string(kPropertyCases) + " cases each; violations: " + detail + num(elapsed, 3) + " s (<" +
                num(kA2Seconds) + ")"};
}

// ---------------------------------------------------------------------------

struct Study {
    fs::path train_dir;
    std::vector<Network> checkpoints;
    PipelineConfig pipeline;
    std::vector<PatchExample> final_precision_patches;
};

Outcome a3_convergence(Study& st) {
    progress("training the reference network (" + std::to_string(kTrainImages) + " images, " +
             std::to_string(kTrainEpochs) + " epochs)");
    const auto start = std::chrono::steady_clock::now();
    fs::remove_all(st.train_dir);
    const int rc = cli::run({"train", "--synthetic", std::to_string(kTrainImages), "--epochs", std::to_string(kTrainEpochs),
                             "--seed", std::to_string(kTrainSeed), "--out", st.train_dir.string()});
    if (rc != cli::kOk) return {false, "train exited with " + std::to_string(rc)};
    st.checkpoints = cli::load_checkpoints(st.train_dir.string());
    const double train_seconds = seconds_since(start);
    std::istringstream log(detail::read_file((st.train_dir / "train_log.tsv").string()));
    std::string line, last;
    while (std::getline(log, line))
        if (!line.empty()) last = line;
    const double val_acc = std::stod(last.substr(last.rfind('\t') + 1));

    Rng probe_rng(0xA3);
    const auto probes = generate_dataset(kProbes, probe_rng);
    std::vector<double> epochs, jaccards;
    for (std::size_t e = 1; e < st.checkpoints.size(); ++e) {
        epochs.push_back(static_cast<double>(e));
        jaccards.push_back(mean_jaccard(st.checkpoints[e], probes, st.pipeline));
        progress("epoch " + std::to_string(e) + " mean Jaccard " + num(jaccards.back()));
    }
    const double rho = spearman(epochs, jaccards);
    const double gain = jaccards.back() - jaccards.front();
    std::string trajectory;
    for (double j : jaccards) trajectory += (trajectory.empty() ? "" : ",") + num(j, 3);
    return {rho > kMinSpearman && gain >= kMinJaccardGain && val_acc >= kMinValidationAccuracy,
            "val-acc " + num(val_acc) + " (>=" + num(kMinValidationAccuracy) + "), spearman " + num(rho) + " (>" + num(kMinSpearman) + "), J(final)-J(1) " + num(gain) + " (>=" +
                num(kMinJaccardGain) + "), train " + num(train_seconds, 3) + " s, total " +
                num(seconds_since(start), 3) + " s; J[1.." + std::to_string(jaccards.size()) + "]=" + trajectory};
}

Outcome a4_secondary(Study& st) {
    const Metric pair[] = {Metric::act_out_corr, Metric::act_precision};
    int agreeing = 0;
    std::string detail;
    for (int s = 1; s <= kA4Seeds; ++s) {
        Rng img_rng(0xA4, static_cast<std::uint64_t>(s));
        const auto images = generate_dataset(kPatchImages, img_rng);
        PipelineConfig cfg = st.pipeline;
        cfg.explain.perturbation.seed = static_cast<std::uint64_t>(s);
        auto accuracy_at = [&](std::size_t epoch) {
            auto sets = build_patch_datasets(st.checkpoints.at(epoch), images, pair, cfg);
            std::map<Metric, double> acc;
            for (Metric m : pair)
                acc[m] = train_secondary(sets.at(m).examples, Rng(0xA4 + s, epoch)).accuracy;
            if (epoch + 1 == st.checkpoints.size() && s == 1)
                st.final_precision_patches = std::move(sets.at(Metric::act_precision).examples);
            return acc;
        };
        double early_prec = 0.0, early_corr = 0.0;
        for (std::size_t e = 1; e <= kEarlyEpochs; ++e) {
            const auto acc = accuracy_at(e);
            early_prec += acc.at(Metric::act_precision) / kEarlyEpochs;
            early_corr += acc.at(Metric::act_out_corr) / kEarlyEpochs;
        }
        const double final_prec = accuracy_at(st.checkpoints.size() - 1).at(Metric::act_precision);
        const bool ok = final_prec >= kMinPrecisionAccuracy && early_prec >= early_corr;
        agreeing += ok;
        progress("A4 seed " + std::to_string(s) + ": final precision " + num(final_prec) + ", early precision " +
                 num(early_prec) + " vs corr " + num(early_corr));
        detail += "seed " + std::to_string(s) + " " + (ok ? "ok" : "no") + " (final prec " + num(final_prec, 3) +
                  ", early prec " + num(early_prec, 3) + " vs corr " + num(early_corr, 3) + "); ";
    }
    return {2 * agreeing > kA4Seeds, std::to_string(agreeing) + "/" + std::to_string(kA4Seeds) + " seeds agree: " + detail};
}

Outcome a5_localization(const Study& st) {
    Rng rng(0xA5);
    std::vector<LabeledImage> positives;
    while (positives.size() < kLocalizationImages)
        for (auto& img : generate_dataset(2 * kLocalizationImages, rng))
            if (img.label == 1 && img.mask && positives.size() < kLocalizationImages) positives.push_back(std::move(img));
    const auto scores = localization_scores(st.checkpoints.back(), positives, kAllMetrics, st.pipeline);
    const double prec = scores.at(Metric::act_precision).first;
    bool pass = prec >= kMinLocalization;
    std::string detail = "act-precision " + num(prec) + " (>=" + num(kMinLocalization) + ")";
    for (Metric m : {Metric::act_sum, Metric::act_var, Metric::weight_sum, Metric::weight_var}) {
        const double v = scores.at(m).first;
        pass = pass && prec >= v - kBaselineSlack;
        detail += ", " + std::string(metric_name(m)) + " " + num(v);
    }
    detail += ", act-out-corr " + num(scores.at(Metric::act_out_corr).first) + " (context)";
    return {pass, detail};
}

Outcome a6_determinism(const Study& st, const fs::path& work) {
    const auto explain_into = [&](const fs::path& out) {
        fs::remove_all(out);
        return cli::run({"explain", "--weights", (st.train_dir / "ckpt_epoch_030.nnwc").string(), "--manifest",
                         (st.train_dir / "network.manifest").string(), "--image",
                         (st.train_dir / "data" / "img_00001.ppm").string(), "--mask",
                         (st.train_dir / "data" / "img_00001_mask.pgm").string(), "--metric", "all", "--seed", "7",
                         "--out", out.string()});
    };
    const auto train_into = [&](const fs::path& out) {
        fs::remove_all(out);
        return cli::run({"train", "--synthetic", "100", "--epochs", "2", "--seed", "5", "--out", out.string()});
    };
    const fs::path ea = work / "explain_a", eb = work / "explain_b", ta = work / "train_a", tb = work / "train_b";
    if (explain_into(ea) != cli::kOk || explain_into(eb) != cli::kOk) return {false, "explain failed"};
    if (train_into(ta) != cli::kOk || train_into(tb) != cli::kOk) return {false, "train failed"};
    const auto xa = directory_bytes(ea), xb = directory_bytes(eb);
    const auto ya = directory_bytes(ta), yb = directory_bytes(tb);
    return {xa == xb && ya == yb, "explain " + std::to_string(xa.size()) + " files " + (xa == xb ? "identical" : "DIFFER") +
                                      ", train " + std::to_string(ya.size()) + " files " +
                                      (ya == yb ? "identical" : "DIFFER")};
}

Outcome a7_permutation_null(Study& st) {
    if (st.final_precision_patches.empty()) {
        Rng img_rng(0xA4, 1);
        const auto images = generate_dataset(kPatchImages, img_rng);
        PipelineConfig cfg = st.pipeline;
        cfg.explain.perturbation.seed = 1;
        st.final_precision_patches =
            build_patch_dataset(st.checkpoints.back(), images, Metric::act_precision, cfg).examples;
    }
    bool pass = true;
    std::string detail = std::to_string(st.final_precision_patches.size()) + " act-precision patches; accuracies";
    for (int r = 0; r < kReshuffles; ++r) {
        auto data = st.final_precision_patches;
        Rng shuffle(0xA7, static_cast<std::uint64_t>(r));
        for (std::size_t i = data.size(); i > 1; --i) std::swap(data[i - 1].label, data[shuffle.below(i)].label);
        const double acc = train_secondary(data, Rng(0xA7 + 1, static_cast<std::uint64_t>(r))).accuracy;
        pass = pass && std::abs(acc - kChance) <= kChanceBand;
        detail += " " + num(acc, 3);
    }
    return {pass, detail + " (within " + num(kChance) + "+-" + num(kChanceBand) + ")"};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria A1..A7"};
    std::string workdir = (fs::temp_directory_path() / "xcnn_acceptance").string();
    std::vector<std::string> only;
    app.add_option("--workdir", workdir, "Scratch directory for training runs and outputs");
    app.add_option("--only", only, "Run a subset, e.g. --only A1 A2")->delimiter(',');
    CLI11_PARSE(app, argc, argv);

    const fs::path work(workdir);
    fs::create_directories(work);
    Study st;
    st.train_dir = work / "reference";

    auto wanted = [&](const std::string& id) {
        return only.empty() || std::find(only.begin(), only.end(), id) != only.end();
    };
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"A1", [&] { return a1_numerics(); }},
        {"A2", [&] { return a2_properties(); }},
        {"A3", [&] { return a3_convergence(st); }},
        {"A4", [&] { return a4_secondary(st); }},
        {"A5", [&] { return a5_localization(st); }},
        {"A6", [&] { return a6_determinism(st, work); }},
        {"A7", [&] { return a7_permutation_null(st); }},
    };
    // A4..A7 reuse the network trained in A3.
    const bool needs_training = wanted("A3") || wanted("A4") || wanted("A5") || wanted("A6") || wanted("A7");

    int failed = 0;
    for (const auto& [id, run] : criteria) {
        if (!wanted(id) && !(id == "A3" && needs_training)) continue;
        progress("running " + id);
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        if (!wanted(id)) continue;
        failed += !o.pass;
        std::cout << id << (o.pass ? " PASS  " : " FAIL  ") << o.detail << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
