#pragma once

#include "patchcast/data.hpp"
#include "patchcast/model.hpp"
#include "patchcast/synth.hpp"
#include "patchcast/training.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace patchcast {

struct ConfigKey {
    std::string name;
    std::string default_value;
    std::string help;
};

/// Flat key/value configuration shared by every command. Values come from
/// defaults, then a config file, then command-line flags; the effective set is
/// echoed into every report.
class ExperimentConfig {
public:
    ExperimentConfig();

    static const std::vector<ConfigKey>& keys();
    static bool known(std::string_view key);

    // Throws UsageError for unknown keys.
    void set(std::string_view key, std::string_view value);
    const std::string& get(std::string_view key) const;
    bool explicitly_set(std::string_view key) const { return explicit_.count(std::string(key)) > 0; }

    // `key = value` lines, `#` comments, lists comma-separated.
    void load_file(const std::filesystem::path& path);

    const std::map<std::string, std::string>& entries() const { return values_; }
    std::string echo() const;

    ModelConfig model_config(Index variables) const;
    TrainConfig train_config() const;
    SynthSpec synth_spec() const;
    DatasetSpec dataset_spec() const;

    Index get_int(std::string_view key) const;
    double get_double(std::string_view key) const;
    bool get_bool(std::string_view key) const;

private:
    std::map<std::string, std::string> values_;
    std::set<std::string> explicit_;
};

struct LoadedDataset {
    std::string name;
    DatasetSpec spec;
    Series series;
};

LoadedDataset load_dataset(const ExperimentConfig& config);

struct RunResult {
    RunReport report;
    ModelConfig model;  // resolved
    TrainConfig train;
    std::string dataset;
};

/// One full training run: split, standardize, init, train, evaluate. When
/// `run_dir` is given the report and best checkpoint are written there.
RunResult run_training(const ExperimentConfig& config, const LoadedDataset& data,
                       const std::optional<std::filesystem::path>& run_dir = std::nullopt,
                       std::string_view command = "train");

std::string report_json(const RunResult& run, const ExperimentConfig& config, std::string_view command);

inline constexpr const char* kSummaryHeader = "config_hash,dataset,lookback,horizon,seed,mse,mae,seconds";

// Appends one summary row, writing the header when the file is new. In
// deterministic mode the seconds column is written as 0.
void append_summary(const std::filesystem::path& path, const RunResult& run);

/// Averaged MSE/MAE of the patch-MLP row of the published benchmark table.
struct PublishedReference {
    double mse;
    double mae;
};

std::optional<PublishedReference> published_reference(std::string_view dataset);

struct AblationCase {
    int id;
    std::string label;
    bool decompose;
    bool mpe;
    bool dot_product;
    bool inter_variable;
    bool decompose_input;
};

const std::vector<AblationCase>& ablation_cases();
ExperimentConfig apply_ablation(const ExperimentConfig& base, const AblationCase& c);

struct SweepPoint {
    double value;
    Metrics metrics;
};

std::vector<double> sweep_values(const ExperimentConfig& config, std::string_view axis);
ExperimentConfig apply_sweep_value(const ExperimentConfig& base, std::string_view axis, double value);

struct GradCheckOutcome {
    GradCheckResult result;
    bool passed = false;
    double threshold = 1e-4;
};

// Throws UsageError when the config is larger than the tiny-config limits.
GradCheckOutcome run_gradcheck(const ExperimentConfig& config);

// Commands return the process exit code: 0 ok, 1 runtime failure, 2 usage.
int cmd_train(const ExperimentConfig& config, std::ostream& out);
int cmd_bench(const ExperimentConfig& config, std::ostream& out);
int cmd_sweep(const ExperimentConfig& config, std::ostream& out);
int cmd_ablate(const ExperimentConfig& config, std::ostream& out);
int cmd_gradcheck(const ExperimentConfig& config, std::ostream& out);

/// Full command-line entry point: `patchcast <command> [--config file] [--key value ...]`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace patchcast
