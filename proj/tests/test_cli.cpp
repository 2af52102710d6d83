#include "doctest.h"

#include "patchcast/experiment.hpp"
#include "patchcast/text.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

using namespace patchcast;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

struct CliResult {
    int code;
    std::string out;
    std::string err;
};

CliResult cli(std::vector<std::string> args) {
    args.insert(args.begin(), "patchcast");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out;
    std::ostringstream err;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

// Small synthetic setup that trains in well under a second.
std::vector<std::string> tiny_flags(const fs::path& out_dir) {
    return {"--lookback",     "24", "--horizon",     "8",  "--patch-scales", "4,8", "--d-model", "16",
            "--num-blocks",   "1",  "--pool-kernel", "3",  "--max-epochs",   "2",   "--batch-size", "16",
            "--synth-length", "300", "--out-dir",    out_dir.string()};
}

std::vector<std::string> with(std::vector<std::string> base, std::initializer_list<std::string> extra) {
    base.insert(base.end(), extra);
    return base;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

} // namespace

TEST_CASE("usage errors exit with 2") {
    CHECK(cli({"train", "--bogus", "1"}).code == 2);
    CHECK(cli({}).code == 2);
    CHECK(cli({"launch"}).code == 2);
    const auto bad_value = cli({"train", "--lookback", "abc"});
    CHECK(bad_value.code == 2);
    CHECK(bad_value.err.find("lookback") != std::string::npos);
    CHECK(cli({"train", "--activation", "tanh"}).code == 2);
    CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("missing dataset is a runtime error") {
    TempDir dir("patchcast_cli_missing");
    const auto r = cli({"train", "--dataset", (dir.path / "ETTh1.csv").string(), "--out-dir", dir.path.string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("not found") != std::string::npos);
}

TEST_CASE("gradcheck command") {
    const auto ok = cli({"gradcheck"});
    CHECK(ok.code == 0);
    CHECK(ok.out.find("PASS") != std::string::npos);
    CHECK(ok.out.find("worst parameter") != std::string::npos);
    CHECK(ok.out.find("# effective config") != std::string::npos);

    const auto bad = cli({"gradcheck", "--corrupt-backward", "true"});
    CHECK(bad.code == 1);
    CHECK(bad.out.find("FAIL") != std::string::npos);

    CHECK(cli({"gradcheck", "--lookback", "96"}).code == 2);
    CHECK(cli({"gradcheck", "--gradcheck-variables", "4"}).code == 2);
    CHECK(cli({"gradcheck", "--gradcheck-eps", "0"}).code == 2);
}

TEST_CASE("config file and flag precedence") {
    TempDir dir("patchcast_cli_config");
    std::ofstream(dir.path / "run.cfg") << "# tiny run\nlookback = 24\nhorizon = 8 # comment\n"
                                        << "patch_scales = 4, 8\nd_model = 16\nnum_blocks = 1\n"
                                        << "pool_kernel = 3\nmax_epochs = 1\nsynth_length = 300\nseed = 3\n"
                                        << "out_dir = " << dir.path.string() << "\n";
    const auto r = cli({"train", "--config", (dir.path / "run.cfg").string(), "--seed", "9"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("seed = 9") != std::string::npos);
    CHECK(r.out.find("lookback = 24") != std::string::npos);

    std::ofstream(dir.path / "bad.cfg") << "lookbak = 24\n";
    CHECK(cli({"train", "--config", (dir.path / "bad.cfg").string()}).code == 2);
    CHECK(cli({"train", "--config", (dir.path / "absent.cfg").string()}).code == 2);
}

TEST_CASE("train writes report, checkpoint and summary") {
    TempDir dir("patchcast_cli_train");
    const auto flags = tiny_flags(dir.path);
    std::vector<std::string> args{"train"};
    args.insert(args.end(), flags.begin(), flags.end());
    REQUIRE(cli(args).code == 0);

    fs::path run_dir;
    for (const auto& e : fs::directory_iterator(dir.path)) {
        if (e.is_directory()) run_dir = e.path();
    }
    REQUIRE(!run_dir.empty());
    CHECK(fs::exists(run_dir / "checkpoint.bin"));
    const auto report = nlohmann::json::parse(slurp(run_dir / "report.json"));
    CHECK(report["fingerprint"].get<std::string>().size() == 16);
    CHECK(report["metrics"]["test_mse"].get<double>() >= 0.0);
    CHECK(report["config"]["lookback"] == "24");
    CHECK(report["model"]["patch_scales"] == "4,8");
    CHECK(report["train_subsampled"] == false);
    CHECK(report["epochs"].size() == 2);

    const PatchMLP<float> model = load_checkpoint<float>(run_dir / "checkpoint.bin");
    CHECK(model.config().lookback == 24);

    REQUIRE(cli(args).code == 0);
    const CsvTable summary = read_csv_table(dir.path / "summary.csv");
    CHECK(text::join(summary.header) == kSummaryHeader);
    REQUIRE(summary.rows.size() == 2);
    CHECK(summary.rows[0] == summary.rows[1]);
    CHECK(summary.rows[0][1] == "synthetic");
    CHECK(summary.rows[0][7] == "0.000");
}

TEST_CASE("bench emits per-horizon rows and their average") {
    TempDir dir("patchcast_cli_bench");
    std::vector<std::string> args{"bench"};
    const auto flags = with(tiny_flags(dir.path), {"--horizons", "4,6,8,12", "--max-epochs", "1"});
    args.insert(args.end(), flags.begin(), flags.end());
    const auto r = cli(args);
    REQUIRE(r.code == 0);
    const Series table = load_csv(dir.path / "bench_synthetic.csv");
    REQUIRE(table.timestamps.size() == 5);
    CHECK(table.timestamps[4] == "avg");
    CHECK(table.names == std::vector<std::string>{"mse", "mae"});
    CHECK(table.values(4, 0) == doctest::Approx(table.values.topRows(4).col(0).mean()).epsilon(1e-9));
    CHECK(table.values(4, 1) == doctest::Approx(table.values.topRows(4).col(1).mean()).epsilon(1e-9));
    CHECK(read_csv_table(dir.path / "summary.csv").rows.size() == 4);
}

TEST_CASE("published references") {
    REQUIRE(published_reference("ETTh1"));
    CHECK(published_reference("ETTh1")->mse == 0.438);
    CHECK(published_reference("ETTh1")->mae == 0.429);
    CHECK_FALSE(published_reference("synthetic"));
}

TEST_CASE("sweep") {
    TempDir dir("patchcast_cli_sweep");
    SUBCASE("non-divisible patch fails before any run") {
        std::vector<std::string> args{"sweep", "--axis", "patch", "--values", "4,5"};
        const auto flags = tiny_flags(dir.path);
        args.insert(args.end(), flags.begin(), flags.end());
        const auto r = cli(args);
        CHECK(r.code == 2);
        CHECK(r.err.find("5") != std::string::npos);
        CHECK_FALSE(fs::exists(dir.path / "summary.csv"));
    }
    SUBCASE("unknown axis") {
        CHECK(cli({"sweep", "--axis", "width", "--out-dir", dir.path.string()}).code == 2);
    }
    SUBCASE("results sorted by axis value") {
        std::vector<std::string> args{"sweep", "--axis", "patch", "--values", "8,2,4"};
        const auto flags = with(tiny_flags(dir.path), {"--max-epochs", "1"});
        args.insert(args.end(), flags.begin(), flags.end());
        REQUIRE(cli(args).code == 0);
        const Series table = load_csv(dir.path / "sweep_patch.csv");
        CHECK(table.timestamps == std::vector<std::string>{"2", "4", "8"});
    }
    SUBCASE("single-element sweep matches train") {
        std::vector<std::string> sweep{"sweep", "--axis", "lr", "--values", "0.002"};
        std::vector<std::string> train{"train", "--lr", "0.002"};
        const auto flags = tiny_flags(dir.path);
        sweep.insert(sweep.end(), flags.begin(), flags.end());
        train.insert(train.end(), flags.begin(), flags.end());
        REQUIRE(cli(sweep).code == 0);
        REQUIRE(cli(train).code == 0);
        const CsvTable summary = read_csv_table(dir.path / "summary.csv");
        REQUIRE(summary.rows.size() == 2);
        CHECK(summary.rows[0] == summary.rows[1]);
    }
}

TEST_CASE("sweep value handling") {
    ExperimentConfig c;
    CHECK(sweep_values(c, "patch") == std::vector<double>{1, 2, 4, 8, 16});
    CHECK(sweep_values(c, "lookback").size() == 7);
    c.set("sweep_values", "1.5");
    CHECK_THROWS_AS(sweep_values(c, "blocks"), ConfigError);
    const ExperimentConfig p = apply_sweep_value(ExperimentConfig{}, "patch", 8);
    CHECK(p.get("patch_scales") == "8");
    CHECK(apply_sweep_value(ExperimentConfig{}, "lr", 5e-4).get_double("lr") == 5e-4);
}

TEST_CASE("ablation grid") {
    CHECK(ablation_cases().size() == 9);
    const ExperimentConfig nine = apply_ablation(ExperimentConfig{}, ablation_cases()[8]);
    CHECK(nine.get("decompose_input") == "true");
    const ExperimentConfig five = apply_ablation(ExperimentConfig{}, ablation_cases()[4]);
    CHECK(five.get("use_decompose") == "false");

    TempDir dir("patchcast_cli_ablate");
    std::vector<std::string> args{"ablate"};
    const auto flags = with(tiny_flags(dir.path), {"--max-epochs", "1", "--input-pool-kernel", "5"});
    args.insert(args.end(), flags.begin(), flags.end());
    const auto r = cli(args);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("✓") != std::string::npos);
    CHECK(r.out.find("✗") != std::string::npos);
    const Series table = load_csv(dir.path / "ablation.csv");
    CHECK(table.values.rows() == 9);
    CHECK(table.names.front() == "decompose");

    // case 1 is the default model
    std::vector<std::string> train{"train", "--max-epochs", "1", "--input-pool-kernel", "5"};
    train.insert(train.end(), flags.begin(), flags.end());
    REQUIRE(cli(train).code == 0);
    const CsvTable summary = read_csv_table(dir.path / "summary.csv");
    REQUIRE(summary.rows.size() == 10);
    CHECK(summary.rows.front() == summary.rows.back());
}

TEST_CASE("experiment config") {
    ExperimentConfig c;
    CHECK_FALSE(c.explicitly_set("lookback"));
    c.set("lookback", " 48 ");
    CHECK(c.get("lookback") == "48");
    CHECK(c.explicitly_set("lookback"));
    CHECK_THROWS_AS(c.set("nonsense", "1"), UsageError);
    CHECK(c.model_config(3).variables == 3);
    CHECK(c.model_config(3).lookback == 48);

    c.set("dataset", "data/ETTm2.csv");
    const DatasetSpec s = c.dataset_spec();
    CHECK(s.split == SplitScheme::ettm);
    CHECK(s.freq == Frequency::quarter_hourly);
    c.set("split", "weekly");
    CHECK_THROWS_AS(c.dataset_spec(), ConfigError);

    ExperimentConfig sc;
    sc.set("synth_variables", "2");
    sc.set("synth_coupling", "1,0.5,0,1");
    sc.set("synth_lags", "0,2");
    const SynthSpec spec = sc.synth_spec();
    CHECK(spec.coupling.rows() == 2);
    CHECK(spec.coupling(0, 1) == 0.5);
    sc.set("synth_coupling", "1,2,3");
    CHECK_THROWS_AS(sc.synth_spec(), ConfigError);
}
