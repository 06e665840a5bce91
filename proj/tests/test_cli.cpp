#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "checks.hpp"
#include "xcnn/cli.hpp"

using namespace xcnn;
namespace fs = std::filesystem;

namespace {

std::map<std::string, std::string> directory_bytes(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = detail::read_file(e.path().string());
    return out;
}

std::vector<std::vector<std::string>> read_tsv(const fs::path& file) {
    std::istringstream is(detail::read_file(file.string()));
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(is, line)) {
        std::vector<std::string> cells;
        std::istringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, '\t')) cells.push_back(cell);
        rows.push_back(cells);
    }
    return rows;
}

class CliRun : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        root = fs::temp_directory_path() / "xcnn_cli_test";
        fs::remove_all(root);
        fs::create_directories(root);
        train_dir = root / "train";
        ASSERT_EQ(cli::run({"train", "--synthetic", "20", "--epochs", "1", "--seed", "3", "--out", train_dir.string()}),
                  cli::kOk);
    }
    static void TearDownTestSuite() { fs::remove_all(root); }

    static std::vector<std::string> explain_args(const fs::path& out, const std::string& metric = "all") {
        return {"explain",  "--weights", (train_dir / "ckpt_epoch_001.nnwc").string(),
                "--manifest", (train_dir / "network.manifest").string(),
                "--image",  (train_dir / "data" / "img_00001.ppm").string(),
                "--mask",   (train_dir / "data" / "img_00001_mask.pgm").string(),
                "--metric", metric, "--seed", "9", "--out", out.string()};
    }

    static inline fs::path root, train_dir;
};

} // namespace

TEST(CliParse, MetricsAndBands) {
    EXPECT_EQ(cli::parse_metrics({"all"}).size(), 6u);
    EXPECT_EQ(cli::parse_metrics({"act-sum,act-precision", "act-sum"}).size(), 2u);
    EXPECT_THROW(cli::parse_metrics({}), UsageError);
    EXPECT_THROW(cli::parse_metrics({""}), UsageError);
    EXPECT_THROW(cli::parse_metrics({"act-max"}), UsageError);
    const auto b = cli::parse_bands("3,6");
    EXPECT_EQ(b.color(2)[0], 1.0f);
    EXPECT_EQ(b.color(3)[1], 1.0f);
    EXPECT_EQ(b.color(6)[2], 1.0f);
    EXPECT_THROW(cli::parse_bands("6,3"), UsageError);
}

TEST(CliExit, UsageErrors) {
    EXPECT_EQ(cli::run({}), cli::kUsage);
    EXPECT_EQ(cli::run({"frobnicate"}), cli::kUsage);
    EXPECT_EQ(cli::run({"train", "--epochs", "1"}), cli::kUsage);
    EXPECT_EQ(cli::run({"train", "--epochs", "1", "--out", "/tmp/xcnn_unused"}), cli::kUsage);
}

TEST(CliExit, DataErrors) {
    const auto dir = fs::temp_directory_path() / "xcnn_cli_bad";
    fs::create_directories(dir);
    detail::write_file((dir / "net.manifest").string(), encode_manifest(reference_network()));
    detail::write_file((dir / "w.nnwc").string(), "JUNKJUNKJUNK");
    EXPECT_EQ(cli::run({"explain", "--weights", (dir / "w.nnwc").string(), "--manifest", (dir / "net.manifest").string(),
                        "--image", (dir / "missing.ppm").string(), "--out", (dir / "o").string()}),
              cli::kData);
    EXPECT_EQ(cli::run({"evaluate", "--checkpoints", (dir / "none").string(), "--data", (dir / "none").string(),
                        "--out", (dir / "o").string()}),
              cli::kData);
    fs::remove_all(dir);
}

TEST(CliExit, NumericFailure) {
    const auto dir = fs::temp_directory_path() / "xcnn_cli_diverge";
    EXPECT_EQ(cli::run({"train", "--synthetic", "6", "--epochs", "2", "--lr", "1e30", "--out", dir.string()}),
              cli::kNumeric);
    fs::remove_all(dir);
}

TEST_F(CliRun, TrainWritesCheckpointsAndLog) {
    EXPECT_TRUE(fs::exists(train_dir / "ckpt_epoch_000.nnwc"));
    EXPECT_TRUE(fs::exists(train_dir / "ckpt_epoch_001.nnwc"));
    EXPECT_TRUE(fs::exists(train_dir / "MANIFEST.txt"));
    const auto log = read_tsv(train_dir / "train_log.tsv");
    ASSERT_EQ(log.size(), 2u);
    EXPECT_EQ(log[0], (std::vector<std::string>{"epoch", "train_acc", "val_acc"}));
}

TEST_F(CliRun, ZeroEpochsWritesInitialCheckpointOnly) {
    const auto out = root / "zero";
    ASSERT_EQ(cli::run({"train", "--synthetic", "6", "--epochs", "0", "--out", out.string()}), cli::kOk);
    EXPECT_TRUE(fs::exists(out / "ckpt_epoch_000.nnwc"));
    EXPECT_FALSE(fs::exists(out / "ckpt_epoch_001.nnwc"));
    EXPECT_EQ(detail::read_file((out / "train_log.tsv").string()), "epoch\ttrain_acc\tval_acc\n");
}

TEST_F(CliRun, TrainIsByteIdenticalAcrossRuns) {
    const auto again = root / "train_again";
    ASSERT_EQ(cli::run({"train", "--synthetic", "20", "--epochs", "1", "--seed", "3", "--out", again.string()}), cli::kOk);
    EXPECT_EQ(directory_bytes(train_dir), directory_bytes(again));
}

TEST_F(CliRun, ExplainAllMetricsCardinality) {
    const auto out = root / "explain_all";
    ASSERT_EQ(cli::run(explain_args(out)), cli::kOk);
    std::size_t annotated = 0, dumps = 0;
    for (const auto& e : fs::directory_iterator(out)) {
        const auto name = e.path().filename().string();
        annotated += name.rfind("annotated_", 0) == 0;
        dumps += name.rfind("scores_", 0) == 0;
    }
    EXPECT_EQ(annotated, 6u);
    EXPECT_EQ(dumps, 6u);
    EXPECT_TRUE(fs::exists(out / "localization.tsv"));
    // Every file written is listed in the manifest.
    const std::string manifest = detail::read_file((out / "MANIFEST.txt").string());
    for (const auto& e : fs::directory_iterator(out)) {
        const auto name = e.path().filename().string();
        if (name != "MANIFEST.txt") {
            EXPECT_NE(manifest.find(name + "\t"), std::string::npos) << name;
        }
    }
}

TEST_F(CliRun, ExplainIsByteIdenticalAcrossRuns) {
    const auto a = root / "explain_a", b = root / "explain_b";
    ASSERT_EQ(cli::run(explain_args(a)), cli::kOk);
    ASSERT_EQ(cli::run(explain_args(b)), cli::kOk);
    EXPECT_EQ(directory_bytes(a), directory_bytes(b));
}

TEST_F(CliRun, AnnotationMatchesPatchTable) {
    const auto out = root / "explain_cross";
    ASSERT_EQ(cli::run(explain_args(out, "act-precision")), cli::kOk);
    const Tensor original = read_ppm((train_dir / "data" / "img_00001.ppm").string());
    const Tensor annotated = read_ppm((out / "annotated_act-precision.ppm").string());
    const auto rows = read_tsv(out / "patches_act-precision.tsv");
    ASSERT_GT(rows.size(), 1u);
    // Redraw every box from the table onto the original and compare.
    Tensor redrawn = original;
    const cli::Bands bands;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto layer = std::stoul(rows[r][1]);
        draw_rectangle(redrawn, std::stoul(rows[r][4]), std::stoul(rows[r][5]), std::stoul(rows[r][6]),
                       std::stoul(rows[r][7]), bands.color(layer));
        const std::string patch = "act-precision_" + rows[r][1] + "_" + rows[r][3] + ".ppm";
        const Tensor pixels = read_ppm((out / patch).string());
        EXPECT_EQ(pixels.shape(), (Shape{3, std::stoul(rows[r][6]), std::stoul(rows[r][7])}));
    }
    EXPECT_TRUE(bitwise_equal(redrawn, annotated));
}

TEST_F(CliRun, EvaluateTwoCheckpointsFourProbes) {
    const auto out = root / "evaluate";
    ASSERT_EQ(cli::run({"evaluate", "--checkpoints", train_dir.string(), "--data", (train_dir / "data").string(),
                        "--metrics", "all", "--probes", "4", "--out", out.string()}),
              cli::kOk);
    const auto rows = read_tsv(out / "report.csv");
    ASSERT_FALSE(rows.empty());
    std::map<std::string, int> per_metric;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        std::stringstream ss(rows[r][0]);
        std::vector<std::string> cells;
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        ++per_metric[cells.at(1)];
    }
    EXPECT_EQ(per_metric.size(), 6u);
    for (const auto& [m, n] : per_metric) EXPECT_EQ(n, 2) << m;
}

TEST_F(CliRun, EvaluateEmptyMetricListIsUsageError) {
    EXPECT_EQ(cli::run({"evaluate", "--checkpoints", train_dir.string(), "--data", (train_dir / "data").string(),
                        "--metrics", "", "--out", (root / "ev_empty").string()}),
              cli::kUsage);
}
