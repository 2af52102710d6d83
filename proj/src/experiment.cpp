#include "patchcast/experiment.hpp"
#include "patchcast/text.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

namespace patchcast {

namespace fs = std::filesystem;

const std::vector<ConfigKey>& ExperimentConfig::keys() {
    static const std::vector<ConfigKey> k = {
        // model
        {"lookback", "96", "input window length L"},
        {"horizon", "96", "forecast length T"},
        {"patch_scales", "4,8,12,24", "patch sizes of the multi-scale embedding"},
        {"scale_dims", "", "per-scale embedding widths (empty: derived from d_model)"},
        {"d_model", "512", "target latent width per variable"},
        {"num_blocks", "2", "MLP blocks per path"},
        {"hidden_mult", "2", "MLP hidden width as a multiple of its input width"},
        {"pool_kernel", "25", "odd moving-average kernel of the latent decomposition"},
        {"dropout", "0.1", "dropout rate inside the MLPs"},
        {"activation", "gelu", "gelu or relu"},
        {"use_decompose", "true", "latent moving-average decomposition"},
        {"use_mpe", "true", "multi-scale patch embedding (false: first scale only)"},
        {"use_dot_product", "true", "multiplicative merge in the inter-variable MLP (false: additive)"},
        {"use_inter_variable", "true", "inter-variable MLP on the smooth path"},
        {"use_instance_norm", "true", "per-window instance normalization"},
        {"decompose_input", "false", "decompose the raw window instead of the latent"},
        {"input_pool_kernel", "25", "odd moving-average kernel for decompose_input"},
        // training
        {"lr", "0.001", "Adam learning rate"},
        {"batch_size", "32", "mini-batch size"},
        {"max_epochs", "30", "epoch budget"},
        {"patience", "5", "early-stopping patience in epochs"},
        {"seed", "2024", "run seed (init, shuffling, dropout streams)"},
        {"adam_beta1", "0.9", "Adam beta1"},
        {"adam_beta2", "0.999", "Adam beta2"},
        {"adam_eps", "1e-08", "Adam epsilon"},
        {"max_steps", "0", "optimizer step cap (0: none)"},
        {"train_stride", "1", "stride between training windows (>1 subsamples)"},
        {"deterministic", "true", "serial, reproducible execution; summary seconds written as 0"},
        // data
        {"dataset", "synthetic", "CSV path (relative paths also searched in $PATCHCAST_DATA_DIR) or 'synthetic'"},
        {"freq", "auto", "hourly, quarter_hourly or auto"},
        {"split", "auto", "etth, ettm, ratio or auto (from the file name)"},
        {"train_frac", "0.7", "train fraction for ratio splits"},
        {"val_frac", "0.1", "validation fraction for ratio splits"},
        {"columns", "", "value columns to use (empty: all)"},
        // synthetic data
        {"synth_length", "4000", "synthetic series length"},
        {"synth_variables", "3", "synthetic variable count"},
        {"synth_periods", "24", "sinusoid periods"},
        {"synth_amplitudes", "1", "sinusoid amplitudes"},
        {"synth_trend", "0", "linear trend per step"},
        {"synth_noise", "0.1", "gaussian noise sigma"},
        {"synth_coupling", "", "row-major variables x latents coupling weights"},
        {"synth_lags", "", "per-variable latent delay"},
        {"synth_ar", "0.95", "AR(1) coefficient of the latents"},
        {"synth_seed", "7", "generator seed"},
        // experiments
        {"horizons", "96,192,336,720", "bench horizons"},
        {"sweep_axis", "patch", "patch, lookback, lr, d_model or blocks"},
        {"sweep_values", "", "sweep values (empty: the axis default)"},
        {"out_dir", "runs", "output directory"},
        {"gradcheck_variables", "2", "variables in the gradcheck input"},
        {"gradcheck_eps", "1e-05", "central-difference step"},
        {"corrupt_backward", "false", "test hook: corrupt one backward pass"},
    };
    return k;
}

bool ExperimentConfig::known(std::string_view key) {
    const auto& k = keys();
    return std::any_of(k.begin(), k.end(), [&](const ConfigKey& c) { return c.name == key; });
}

ExperimentConfig::ExperimentConfig() {
    for (const auto& k : keys()) values_[k.name] = k.default_value;
}

void ExperimentConfig::set(std::string_view key, std::string_view value) {
    if (!known(key)) throw UsageError("unknown config key '" + std::string(key) + "'");
    values_[std::string(key)] = text::trim(value);
    explicit_.insert(std::string(key));
}

const std::string& ExperimentConfig::get(std::string_view key) const {
    auto it = values_.find(std::string(key));
    if (it == values_.end()) throw UsageError("unknown config key '" + std::string(key) + "'");
    return it->second;
}

void ExperimentConfig::load_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file " + path.string());
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string trimmed = text::trim(line);
        if (trimmed.empty()) continue;
        const auto eq = trimmed.find('=');
        if (eq == std::string::npos) {
            throw UsageError(path.string() + ":" + std::to_string(line_no) + ": expected 'key = value'");
        }
        const std::string key = text::trim(trimmed.substr(0, eq));
        if (!known(key)) {
            throw UsageError(path.string() + ":" + std::to_string(line_no) + ": unknown config key '" + key + "'");
        }
        set(key, trimmed.substr(eq + 1));
    }
}

std::string ExperimentConfig::echo() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
}

Index ExperimentConfig::get_int(std::string_view key) const { return text::parse_int(get(key), key); }
double ExperimentConfig::get_double(std::string_view key) const { return text::parse_double(get(key), key); }
bool ExperimentConfig::get_bool(std::string_view key) const { return text::parse_bool(get(key), key); }

ModelConfig ExperimentConfig::model_config(Index variables) const {
    ModelConfig c;
    for (const auto& [k, v] : model_config_entries(c)) {
        if (k == "variables") continue;
        set_model_config_entry(c, k, get(k));
    }
    c.variables = variables;
    return c;
}

TrainConfig ExperimentConfig::train_config() const {
    TrainConfig c;
    for (const auto& [k, v] : train_config_entries(c)) set_train_config_entry(c, k, get(k));
    c.validate();
    return c;
}

SynthSpec ExperimentConfig::synth_spec() const {
    SynthSpec s;
    s.length = get_int("synth_length");
    s.variables = get_int("synth_variables");
    s.periods.clear();
    for (long long p : text::parse_int_list(get("synth_periods"), "synth_periods")) s.periods.push_back(p);
    s.amplitudes = text::parse_double_list(get("synth_amplitudes"), "synth_amplitudes");
    s.trend_slope = get_double("synth_trend");
    s.noise_sigma = get_double("synth_noise");
    const auto coupling = text::parse_double_list(get("synth_coupling"), "synth_coupling");
    if (!coupling.empty()) {
        if (s.variables < 1 || static_cast<Index>(coupling.size()) % s.variables != 0) {
            throw ConfigError("synth_coupling needs variables x latents entries");
        }
        const Index latents = static_cast<Index>(coupling.size()) / s.variables;
        s.coupling = Eigen::Map<const Matrix<double>>(coupling.data(), s.variables, latents);
    }
    for (long long lag : text::parse_int_list(get("synth_lags"), "synth_lags")) s.latent_lags.push_back(lag);
    s.latent_ar = get_double("synth_ar");
    s.seed = text::parse_uint(get("synth_seed"), "synth_seed");
    s.validate();
    return s;
}

DatasetSpec ExperimentConfig::dataset_spec() const {
    DatasetSpec spec;
    spec.path = get("dataset");
    const std::string stem = spec.path.stem().string();
    const std::string split = get("split");
    if (split == "auto") {
        if (stem.starts_with("ETTh")) spec.split = SplitScheme::etth;
        else if (stem.starts_with("ETTm")) spec.split = SplitScheme::ettm;
        else spec.split = SplitScheme::ratio;
    } else if (split == "etth") {
        spec.split = SplitScheme::etth;
    } else if (split == "ettm") {
        spec.split = SplitScheme::ettm;
    } else if (split == "ratio") {
        spec.split = SplitScheme::ratio;
    } else {
        throw ConfigError("invalid value '" + split + "' for split: expected etth, ettm, ratio or auto");
    }
    const std::string freq = get("freq");
    if (freq == "auto") spec.freq = stem.starts_with("ETTm") ? Frequency::quarter_hourly : Frequency::hourly;
    else if (freq == "hourly") spec.freq = Frequency::hourly;
    else if (freq == "quarter_hourly") spec.freq = Frequency::quarter_hourly;
    else throw ConfigError("invalid value '" + freq + "' for freq: expected hourly, quarter_hourly or auto");
    spec.train_frac = get_double("train_frac");
    spec.val_frac = get_double("val_frac");
    for (const auto& c : text::split(get("columns"), ',')) {
        if (!text::trim(c).empty()) spec.target_columns.push_back(text::trim(c));
    }
    spec.validate();
    return spec;
}

LoadedDataset load_dataset(const ExperimentConfig& config) {
    LoadedDataset data;
    if (config.get("dataset") == "synthetic") {
        data.name = "synthetic";
        data.spec.split = SplitScheme::ratio;
        data.spec.train_frac = config.get_double("train_frac");
        data.spec.val_frac = config.get_double("val_frac");
        data.spec.validate();
        data.series = generate_series(config.synth_spec());
        return data;
    }
    data.spec = config.dataset_spec();
    data.name = data.spec.path.stem().string();
    const fs::path resolved = resolve_dataset_path(data.spec.path);
    if (!fs::exists(resolved)) {
        throw DataError("dataset not found: " + resolved.string() + " (relative paths are resolved against $" +
                        kDataDirEnv + ")");
    }
    data.series = load_csv(resolved, data.spec.target_columns);
    return data;
}

std::string report_json(const RunResult& run, const ExperimentConfig& config, std::string_view command) {
    using nlohmann::ordered_json;
    const auto& r = run.report;
    ordered_json j;
    j["format"] = "patchcast-run-report";
    j["version"] = 1;
    j["command"] = std::string(command);
    j["dataset"] = run.dataset;
    j["fingerprint"] = r.fingerprint;
    j["seed"] = r.seed;
    j["metrics"] = {{"test_mse", r.test_mse}, {"test_mae", r.test_mae}, {"val_mse", r.val_mse},
                    {"train_mse", r.train_mse}};
    j["best_epoch"] = r.best_epoch;
    j["steps"] = r.steps;
    j["stopped_early"] = r.stopped_early;
    j["seconds"] = r.seconds;
    j["windows"] = {{"train", r.train_windows}, {"val", r.val_windows}, {"test", r.test_windows}};
    j["train_subsampled"] = run.train.train_stride > 1;
    j["parameter_count"] = r.parameter_count;
    ordered_json epochs = ordered_json::array();
    for (const auto& e : r.epochs) {
        epochs.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_mse", e.val_mse}});
    }
    j["epochs"] = epochs;
    ordered_json model;
    for (const auto& [k, v] : model_config_entries(run.model)) model[k] = v;
    j["model"] = model;
    ordered_json cfg;
    for (const auto& [k, v] : config.entries()) cfg[k] = v;
    j["config"] = cfg;
    return j.dump(2) + "\n";
}

RunResult run_training(const ExperimentConfig& config, const LoadedDataset& data,
                       const std::optional<fs::path>& run_dir, std::string_view command) {
    RunResult run;
    run.train = config.train_config();
    run.dataset = data.name;
    const Index lookback = config.get_int("lookback");
    const Index horizon = config.get_int("horizon");
    const ModelConfig requested = config.model_config(data.series.values.cols());
    run.model = requested.resolved();
    run.model.validate();

    const PreparedData prepared =
        prepare_data(data.series.values, data.spec, lookback, horizon, run.train.train_stride);
    PatchMLP<float> model(requested);
    Rng init_rng(run.train.seed, 0);
    init_params(model, init_rng);
    run.report = train(model, prepared.splits, run.train);

    if (run_dir) {
        fs::create_directories(*run_dir);
        std::ofstream(*run_dir / "report.json", std::ios::trunc) << report_json(run, config, command);
        save_checkpoint(*run_dir / "checkpoint.bin", model);
    }
    return run;
}

void append_summary(const fs::path& path, const RunResult& run) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
    std::ofstream out(path, std::ios::app);
    if (!out) throw DataError("cannot append to " + path.string());
    if (fresh) out << kSummaryHeader << '\n';
    std::ostringstream seconds;
    seconds << std::fixed << std::setprecision(3) << (run.train.deterministic ? 0.0 : run.report.seconds);
    out << run.report.fingerprint << ',' << run.dataset << ',' << run.model.lookback << ',' << run.model.horizon
        << ',' << run.report.seed << ',' << text::format_double(run.report.test_mse) << ','
        << text::format_double(run.report.test_mae) << ',' << seconds.str() << '\n';
}

std::optional<PublishedReference> published_reference(std::string_view dataset) {
    std::string key(dataset);
    for (auto& c : key) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    static const std::map<std::string, PublishedReference> table = {
        {"ettm1", {0.374, 0.382}},   {"ettm2", {0.269, 0.311}},   {"etth1", {0.438, 0.429}},
        {"etth2", {0.349, 0.378}},   {"electricity", {0.171, 0.265}}, {"ecl", {0.171, 0.265}},
        {"traffic", {0.417, 0.273}}, {"weather", {0.231, 0.256}}, {"solar", {0.211, 0.261}},
        {"solar_al", {0.211, 0.261}},
    };
    auto it = table.find(key);
    if (it == table.end()) return std::nullopt;
    return it->second;
}

const std::vector<AblationCase>& ablation_cases() {
    static const std::vector<AblationCase> cases = {
        {1, "full", true, true, true, true, false},
        {2, "no MPE", true, false, true, true, false},
        {3, "dot -> add", true, true, false, true, false},
        {4, "no inter-variable", true, true, true, false, false},
        {5, "no decompose", false, true, true, true, false},
        {6, "no decompose, no MPE", false, false, true, true, false},
        {7, "no decompose, dot -> add", false, true, false, true, false},
        {8, "no decompose, no inter-variable", false, true, true, false, false},
        {9, "decompose input first", true, true, true, true, true},
    };
    return cases;
}

ExperimentConfig apply_ablation(const ExperimentConfig& base, const AblationCase& c) {
    ExperimentConfig cfg = base;
    const auto b = [](bool v) { return v ? "true" : "false"; };
    cfg.set("use_decompose", b(c.decompose && !c.decompose_input));
    cfg.set("use_mpe", b(c.mpe));
    cfg.set("use_dot_product", b(c.dot_product));
    cfg.set("use_inter_variable", b(c.inter_variable));
    cfg.set("decompose_input", b(c.decompose_input));
    return cfg;
}

namespace {

const std::vector<std::string> kSweepAxes = {"patch", "lookback", "lr", "d_model", "blocks"};

void check_axis(std::string_view axis) {
    if (std::find(kSweepAxes.begin(), kSweepAxes.end(), axis) == kSweepAxes.end()) {
        throw ConfigError("invalid value '" + std::string(axis) +
                          "' for sweep_axis: expected patch, lookback, lr, d_model or blocks");
    }
}

bool is_integral_axis(std::string_view axis) { return axis != "lr"; }

std::string axis_value_text(std::string_view axis, double value) {
    if (is_integral_axis(axis)) return std::to_string(std::llround(value));
    return text::format_double(value);
}

} // namespace

std::vector<double> sweep_values(const ExperimentConfig& config, std::string_view axis) {
    check_axis(axis);
    std::vector<double> values = text::parse_double_list(config.get("sweep_values"), "sweep_values");
    if (values.empty()) {
        if (axis == "patch") values = {1, 2, 4, 8, 16};
        else if (axis == "lookback") values = {192, 288, 384, 480, 576, 672, 768};
        else if (axis == "lr") values = {1e-4, 5e-4, 1e-3, 5e-3};
        else if (axis == "d_model") values = {64, 128, 256, 512};
        else values = {1, 2, 3, 4};
    }
    for (double v : values) {
        if (is_integral_axis(axis) && (v < 1 || v != std::floor(v))) {
            throw ConfigError("sweep_values: " + text::format_double(v) + " is not a positive integer for axis " +
                              std::string(axis));
        }
        if (!(v > 0)) throw ConfigError("sweep_values must be positive");
    }
    if (axis == "patch") {
        const Index lookback = config.get_int("lookback");
        for (double v : values) {
            if (lookback % static_cast<Index>(v) != 0) {
                throw ConfigError("sweep_values: patch size " + axis_value_text(axis, v) +
                                  " does not divide lookback " + std::to_string(lookback));
            }
        }
    }
    std::sort(values.begin(), values.end());
    return values;
}

ExperimentConfig apply_sweep_value(const ExperimentConfig& base, std::string_view axis, double value) {
    check_axis(axis);
    ExperimentConfig cfg = base;
    const std::string v = axis_value_text(axis, value);
    if (axis == "patch") {
        cfg.set("patch_scales", v);
        cfg.set("scale_dims", "");
    } else if (axis == "lookback") {
        cfg.set("lookback", v);
    } else if (axis == "lr") {
        cfg.set("lr", v);
    } else if (axis == "d_model") {
        cfg.set("d_model", v);
        cfg.set("scale_dims", "");
    } else {
        cfg.set("num_blocks", v);
    }
    return cfg;
}

GradCheckOutcome run_gradcheck(const ExperimentConfig& config) {
    ExperimentConfig cfg = config;
    static const std::vector<std::pair<std::string, std::string>> tiny = {
        {"lookback", "8"},   {"horizon", "4"},     {"patch_scales", "2,4"}, {"d_model", "8"},
        {"num_blocks", "1"}, {"pool_kernel", "3"}, {"input_pool_kernel", "3"},
    };
    for (const auto& [k, v] : tiny) {
        if (!config.explicitly_set(k)) cfg.set(k, v);
    }
    const Index variables = cfg.get_int("gradcheck_variables");
    ModelConfig mc = cfg.model_config(variables);
    mc.dropout_rate = 0.0;
    const ModelConfig resolved = mc.resolved();
    resolved.validate();
    if (resolved.lookback > 16 || resolved.variables > 3 || resolved.d_model > 32) {
        throw UsageError("gradcheck needs a tiny config (lookback <= 16, variables <= 3, d_model <= 32); got lookback " +
                         std::to_string(resolved.lookback) + ", variables " + std::to_string(resolved.variables) +
                         ", d_model " + std::to_string(resolved.d_model));
    }

    const std::uint64_t seed = text::parse_uint(cfg.get("seed"), "seed");
    PatchMLP<double> model(mc);
    Rng rng(seed, 0);
    init_params(model, rng);
    for (auto& p : model.parameters()) {
        if (p.cols == 1) {
            for (auto& v : p.value) v = rng.uniform(-0.1, 0.1);
        }
    }
    model.set_backward_fault(cfg.get_bool("corrupt_backward"));

    Rng data_rng(seed, 3);
    const Index batch = 3;
    std::vector<Matrix<double>> histories;
    std::vector<Matrix<double>> targets;
    for (Index b = 0; b < batch; ++b) {
        Matrix<double> h(resolved.lookback, variables);
        for (Index i = 0; i < h.size(); ++i) h.data()[i] = data_rng.normal();
        Matrix<double> t(resolved.horizon, variables);
        for (Index i = 0; i < t.size(); ++i) t.data()[i] = data_rng.normal();
        histories.push_back(std::move(h));
        targets.push_back(std::move(t));
    }

    const auto objective = [&](bool with_grad) {
        model.zero_grad();
        const auto preds = model.forward(histories);
        double loss = 0.0;
        std::vector<Matrix<double>> grads;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            auto l = mse_loss(preds[i], targets[i]);
            loss += l.value / static_cast<double>(batch);
            grads.push_back(l.grad / static_cast<double>(batch));
        }
        if (with_grad) model.backward(grads);
        return loss;
    };
    const auto params = model.parameters();
    GradCheckOutcome outcome;
    outcome.result = grad_check(objective, std::span<const ParamView<double>>(params), cfg.get_double("gradcheck_eps"));
    outcome.passed = outcome.result.max_relative_error < outcome.threshold;
    return outcome;
}

namespace {

void print_config(const ExperimentConfig& config, std::ostream& out) {
    out << "# effective config\n";
    std::istringstream lines(config.echo());
    std::string line;
    while (std::getline(lines, line)) out << "#   " << line << '\n';
}

fs::path out_dir(const ExperimentConfig& config) { return fs::path(config.get("out_dir")); }

std::string fmt(double v, int precision = 4) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(precision) << v;
    return s.str();
}

void write_text(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << content;
}

fs::path run_dir_for(const ExperimentConfig& config, const LoadedDataset& data, const std::string& prefix) {
    const ModelConfig model = config.model_config(data.series.values.cols()).resolved();
    const std::string fp = config_fingerprint(model, config.train_config());
    return out_dir(config) / (prefix + "_" + data.name + "_L" + std::to_string(model.lookback) + "_T" +
                              std::to_string(model.horizon) + "_" + fp);
}

// Trains, writes report + checkpoint to a run directory named after the
// config fingerprint and appends a summary row.
RunResult run_and_record(const ExperimentConfig& config, const LoadedDataset& data, const std::string& prefix,
                         std::string_view command) {
    RunResult run = run_training(config, data, run_dir_for(config, data, prefix), command);
    append_summary(out_dir(config) / "summary.csv", run);
    return run;
}

} // namespace

int cmd_train(const ExperimentConfig& config, std::ostream& out) {
    print_config(config, out);
    const LoadedDataset data = load_dataset(config);
    const fs::path dir = run_dir_for(config, data, "train");
    const RunResult run = run_and_record(config, data, "train", "train");
    const auto& r = run.report;
    out << "dataset " << run.dataset << "  L=" << run.model.lookback << " T=" << run.model.horizon
        << "  d_model=" << run.model.d_model << "  params=" << r.parameter_count << '\n';
    for (const auto& e : r.epochs) {
        out << "epoch " << std::setw(3) << e.epoch << "  train " << fmt(e.train_loss, 6) << "  val "
            << fmt(e.val_mse, 6) << '\n';
    }
    out << "best epoch " << r.best_epoch << "  steps " << r.steps << (r.stopped_early ? "  (early stop)" : "")
        << '\n';
    out << "train mse " << fmt(r.train_mse, 6) << "\n";
    out << "test  mse " << fmt(r.test_mse, 6) << "  mae " << fmt(r.test_mae, 6) << '\n';
    out << "report " << (dir / "report.json").string() << '\n';
    return 0;
}

int cmd_bench(const ExperimentConfig& config, std::ostream& out) {
    print_config(config, out);
    std::vector<Index> horizons;
    for (long long h : text::parse_int_list(config.get("horizons"), "horizons")) {
        if (h < 1) throw ConfigError("horizons must be positive");
        horizons.push_back(h);
    }
    if (horizons.empty()) throw ConfigError("horizons must not be empty");
    const LoadedDataset data = load_dataset(config);
    const auto ref = published_reference(data.name);

    std::vector<RunResult> runs;
    for (Index h : horizons) {
        ExperimentConfig c = config;
        c.set("horizon", std::to_string(h));
        runs.push_back(run_and_record(c, data, "bench", "bench"));
    }
    double mse = 0.0;
    double mae = 0.0;
    for (const auto& r : runs) {
        mse += r.report.test_mse;
        mae += r.report.test_mae;
    }
    mse /= static_cast<double>(runs.size());
    mae /= static_cast<double>(runs.size());

    std::ostringstream csv;
    csv << "horizon,mse,mae";
    if (ref) csv << ",ref_mse,ref_mae,delta_mse,delta_mae";
    csv << '\n';
    out << std::left << std::setw(10) << "horizon" << std::right << std::setw(10) << "MSE" << std::setw(10) << "MAE";
    if (ref) out << std::setw(12) << "ref MSE" << std::setw(12) << "ref MAE" << std::setw(10) << "dMSE" << std::setw(10) << "dMAE";
    out << '\n';
    const auto emit = [&](const std::string& label, double row_mse, double row_mae) {
        csv << label << ',' << text::format_double(row_mse) << ',' << text::format_double(row_mae);
        out << std::left << std::setw(10) << label << std::right << std::setw(10) << fmt(row_mse) << std::setw(10)
            << fmt(row_mae);
        if (ref) {
            csv << ',' << text::format_double(ref->mse) << ',' << text::format_double(ref->mae) << ','
                << text::format_double(row_mse - ref->mse) << ',' << text::format_double(row_mae - ref->mae);
            out << std::setw(12) << fmt(ref->mse, 3) << std::setw(12) << fmt(ref->mae, 3) << std::setw(10)
                << fmt(row_mse - ref->mse) << std::setw(10) << fmt(row_mae - ref->mae);
        }
        csv << '\n';
        out << '\n';
    };
    for (const auto& r : runs) {
        csv << r.model.horizon << ',' << text::format_double(r.report.test_mse) << ','
            << text::format_double(r.report.test_mae);
        if (ref) csv << ",,,,";
        csv << '\n';
        out << std::left << std::setw(10) << r.model.horizon << std::right << std::setw(10) << fmt(r.report.test_mse)
            << std::setw(10) << fmt(r.report.test_mae) << '\n';
    }
    emit("avg", mse, mae);
    std::string content = csv.str();
    if (ref) {
        // Per-horizon rows carry no published reference; fill with the average's.
        std::string filled;
        std::istringstream lines(content);
        std::string line;
        while (std::getline(lines, line)) {
            if (line.ends_with(",,,,")) {
                line.resize(line.size() - 4);
                const auto cells = text::split(line, ',');
                const double m = text::parse_double(cells[1], "mse");
                const double a = text::parse_double(cells[2], "mae");
                line += "," + text::format_double(ref->mse) + "," + text::format_double(ref->mae) + "," +
                        text::format_double(m - ref->mse) + "," + text::format_double(a - ref->mae);
            }
            filled += line + "\n";
        }
        content = filled;
    }
    const fs::path path = out_dir(config) / ("bench_" + data.name + ".csv");
    write_text(path, content);
    out << "bench table " << path.string() << '\n';
    return 0;
}

int cmd_sweep(const ExperimentConfig& config, std::ostream& out) {
    print_config(config, out);
    const std::string axis = config.get("sweep_axis");
    const std::vector<double> values = sweep_values(config, axis);
    // Validate every point before the first run.
    for (double v : values) {
        const ExperimentConfig c = apply_sweep_value(config, axis, v);
        c.model_config(1).resolved().validate();
    }
    const LoadedDataset data = load_dataset(config);
    std::vector<SweepPoint> points;
    for (double v : values) {
        const RunResult run = run_and_record(apply_sweep_value(config, axis, v), data, "sweep_" + axis, "sweep");
        points.push_back({v, {run.report.test_mse, run.report.test_mae}});
    }
    std::ostringstream csv;
    csv << axis << ",mse,mae\n";
    out << std::left << std::setw(12) << axis << std::right << std::setw(10) << "MSE" << std::setw(10) << "MAE" << '\n';
    for (const auto& p : points) {
        csv << axis_value_text(axis, p.value) << ',' << text::format_double(p.metrics.mse) << ','
            << text::format_double(p.metrics.mae) << '\n';
        out << std::left << std::setw(12) << axis_value_text(axis, p.value) << std::right << std::setw(10)
            << fmt(p.metrics.mse) << std::setw(10) << fmt(p.metrics.mae) << '\n';
    }
    const fs::path path = out_dir(config) / ("sweep_" + axis + ".csv");
    write_text(path, csv.str());
    out << "sweep table " << path.string() << '\n';
    return 0;
}

int cmd_ablate(const ExperimentConfig& config, std::ostream& out) {
    print_config(config, out);
    const LoadedDataset data = load_dataset(config);
    const auto mark = [](bool v) { return v ? "✓" : "✗"; };
    std::ostringstream csv;
    csv << "case,decompose,mpe,dot_product,inter_variable,decompose_input,mse,mae\n";
    out << "case  Decompose  MPE  Dot  Inter  MSE       MAE       variant\n";
    for (const auto& c : ablation_cases()) {
        const RunResult run = run_and_record(apply_ablation(config, c), data, "ablate" + std::to_string(c.id), "ablate");
        csv << c.id << ',' << int(c.decompose) << ',' << int(c.mpe) << ',' << int(c.dot_product) << ','
            << int(c.inter_variable) << ',' << int(c.decompose_input) << ',' << text::format_double(run.report.test_mse)
            << ',' << text::format_double(run.report.test_mae) << '\n';
        out << std::setw(4) << c.id << "  " << std::setw(9) << mark(c.decompose) << "  " << std::setw(3) << mark(c.mpe)
            << "  " << std::setw(3) << mark(c.dot_product) << "  " << std::setw(5) << mark(c.inter_variable) << "  "
            << fmt(run.report.test_mse) << "    " << fmt(run.report.test_mae) << "    " << c.label << '\n';
    }
    const fs::path path = out_dir(config) / "ablation.csv";
    write_text(path, csv.str());
    out << "ablation table " << path.string() << '\n';
    return 0;
}

int cmd_gradcheck(const ExperimentConfig& config, std::ostream& out) {
    print_config(config, out);
    const GradCheckOutcome g = run_gradcheck(config);
    out << (g.passed ? "PASS" : "FAIL") << "  max relative error " << std::scientific << std::setprecision(3)
        << g.result.max_relative_error << " (threshold " << g.threshold << ")\n"
        << "worst parameter " << g.result.worst_parameter << "[" << g.result.worst_index << "]  analytic "
        << g.result.analytic << "  numeric " << g.result.numeric << '\n'
        << std::defaultfloat << "entries checked " << g.result.entries_checked << '\n';
    return g.passed ? 0 : 1;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"patchcast: multi-scale patch MLP forecaster"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "show help for every command");

    struct Command {
        std::string name;
        std::string help;
        int (*run)(const ExperimentConfig&, std::ostream&);
        CLI::App* app = nullptr;
        std::string config_file;
        std::map<std::string, std::string> values;
        std::map<std::string, CLI::Option*> options;
    };
    std::vector<Command> commands = {
        {"train", "train one model and report test metrics", cmd_train, nullptr, {}, {}, {}},
        {"bench", "train one model per horizon and tabulate MSE/MAE", cmd_bench, nullptr, {}, {}, {}},
        {"sweep", "sweep one hyperparameter axis", cmd_sweep, nullptr, {}, {}, {}},
        {"ablate", "run the component ablation grid", cmd_ablate, nullptr, {}, {}, {}},
        {"gradcheck", "compare analytic and finite-difference gradients on a tiny model", cmd_gradcheck, nullptr, {}, {}, {}},
    };
    for (auto& c : commands) {
        c.app = app.add_subcommand(c.name, c.help);
        c.app->add_option("--config", c.config_file, "key = value config file")->check(CLI::ExistingFile);
        for (const auto& k : ExperimentConfig::keys()) {
            std::string names = "--" + k.name;
            std::string dashed = k.name;
            std::replace(dashed.begin(), dashed.end(), '_', '-');
            if (dashed != k.name) names += ",--" + dashed;
            if (c.name == "sweep" && k.name == "sweep_axis") names += ",--axis";
            if (c.name == "sweep" && k.name == "sweep_values") names += ",--values";
            std::string help = k.help;
            if (!k.default_value.empty()) help += " [" + k.default_value + "]";
            c.options[k.name] = c.app->add_option(names, c.values[k.name], help)
                                     ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    for (auto& c : commands) {
        if (!c.app->parsed()) continue;
        try {
            ExperimentConfig config;
            if (!c.config_file.empty()) config.load_file(c.config_file);
            for (const auto& k : ExperimentConfig::keys()) {
                if (c.options[k.name]->count() > 0) config.set(k.name, c.values[k.name]);
            }
            return c.run(config, out);
        } catch (const UsageError& e) {
            err << "usage error: " << e.what() << '\n';
            return 2;
        } catch (const ConfigError& e) {
            err << "config error: " << e.what() << '\n';
            return 2;
        } catch (const std::exception& e) {
            err << "error: " << e.what() << '\n';
            return 1;
        }
    }
    return 2;
}

} // namespace patchcast
