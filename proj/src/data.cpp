#include "patchcast/data.hpp"
#include "patchcast/text.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace patchcast {

void DatasetSpec::validate() const {
    if (split == SplitScheme::ratio) {
        if (!(train_frac > 0.0) || !(val_frac >= 0.0) || train_frac + val_frac > 1.0) {
            throw ConfigError("split fractions must satisfy train_frac > 0, val_frac >= 0, sum <= 1 (got " +
                              text::format_double(train_frac) + ", " + text::format_double(val_frac) + ")");
        }
    }
}

CsvTable read_csv_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    CsvTable table;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (first) {
            if (line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
            if (line.empty()) continue;
            for (auto& cell : text::split(line, ',')) table.header.push_back(text::trim(cell));
            first = false;
            continue;
        }
        if (line.empty()) continue;
        std::vector<std::string> cells;
        for (auto& cell : text::split(line, ',')) cells.push_back(text::trim(cell));
        table.rows.push_back(std::move(cells));
    }
    if (table.header.empty()) throw DataError(path.string() + " is empty");
    return table;
}

std::filesystem::path resolve_dataset_path(const std::filesystem::path& path) {
    if (path.is_absolute() || std::filesystem::exists(path)) return path;
    if (const char* dir = std::getenv(kDataDirEnv); dir != nullptr && *dir != '\0') {
        return std::filesystem::path(dir) / path;
    }
    return path;
}

Series load_csv(const std::filesystem::path& path, const std::vector<std::string>& columns) {
    const CsvTable table = read_csv_table(path);
    if (table.header.size() < 2) {
        throw DataError(path.string() + ": expected a timestamp column followed by numeric columns");
    }
    if (table.rows.empty()) throw DataError(path.string() + " has a header but no data rows");

    std::vector<std::size_t> picked;
    if (columns.empty()) {
        for (std::size_t c = 1; c < table.header.size(); ++c) picked.push_back(c);
    } else {
        for (const auto& name : columns) {
            std::size_t found = 0;
            for (std::size_t c = 1; c < table.header.size(); ++c) {
                if (table.header[c] == name) found = c;
            }
            if (found == 0) throw DataError(path.string() + " has no column named '" + name + "'");
            picked.push_back(found);
        }
    }

    Series series;
    for (std::size_t c : picked) series.names.push_back(table.header[c]);
    series.values.resize(static_cast<Index>(table.rows.size()), static_cast<Index>(picked.size()));
    series.timestamps.reserve(table.rows.size());
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::size_t line_no = r + 2;
        if (row.size() != table.header.size()) {
            throw ParseError(path.string() + ": line " + std::to_string(line_no) + " has " +
                             std::to_string(row.size()) + " cells, header has " +
                             std::to_string(table.header.size()));
        }
        series.timestamps.push_back(row[0]);
        for (std::size_t k = 0; k < picked.size(); ++k) {
            const std::string& cell = row[picked[k]];
            double value = 0.0;
            auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
            if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(value)) {
                throw ParseError(path.string() + ": line " + std::to_string(line_no) + ", column '" +
                                 table.header[picked[k]] + "': '" + cell + "' is not a number");
            }
            series.values(static_cast<Index>(r), static_cast<Index>(k)) = value;
        }
    }
    return series;
}

Series load_csv(const DatasetSpec& spec) {
    return load_csv(resolve_dataset_path(spec.path), spec.target_columns);
}

void write_series_csv(const std::filesystem::path& path, const Series& series) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out << "date";
    for (const auto& n : series.names) out << ',' << n;
    out << '\n';
    for (Index r = 0; r < series.values.rows(); ++r) {
        if (static_cast<std::size_t>(r) < series.timestamps.size()) {
            out << series.timestamps[static_cast<std::size_t>(r)];
        } else {
            out << r;
        }
        for (Index c = 0; c < series.values.cols(); ++c) out << ',' << text::format_double(series.values(r, c));
        out << '\n';
    }
    if (!out) throw DataError("failed writing " + path.string());
}

namespace {

constexpr Index kHoursPerMonth = 30 * 24;

std::string split_name(SplitScheme s) {
    switch (s) {
        case SplitScheme::etth: return "etth";
        case SplitScheme::ettm: return "ettm";
        case SplitScheme::ratio: return "ratio";
    }
    return "?";
}

SplitRanges ratio_ranges(Index rows, double train_frac, double val_frac) {
    const auto cut = [rows](double frac) { return static_cast<Index>(std::floor(frac * static_cast<double>(rows) + 1e-9)); };
    const Index n_train = cut(train_frac);
    const Index n_val = cut(val_frac);
    return {{0, n_train}, {n_train, n_train + n_val}, {n_train + n_val, rows}};
}

bool ranges_fit(const SplitRanges& r, Index rows, Index lookback, Index horizon) {
    return r.test.end <= rows && r.train.size() >= lookback + horizon && r.val.size() >= horizon &&
           r.test.size() >= horizon && r.val.begin >= lookback;
}

} // namespace

SplitRanges split(Index rows, const DatasetSpec& spec, Index lookback, Index horizon) {
    spec.validate();
    if (lookback < 1 || horizon < 1) throw ConfigError("lookback and horizon must be >= 1");
    SplitRanges r;
    Index minimum = 0;
    if (spec.split == SplitScheme::ratio) {
        r = ratio_ranges(rows, spec.train_frac, spec.val_frac);
        if (!ranges_fit(r, rows, lookback, horizon)) {
            const double test_frac = 1.0 - spec.train_frac - spec.val_frac;
            double need = static_cast<double>(lookback + horizon) / spec.train_frac;
            if (spec.val_frac > 0) need = std::max(need, static_cast<double>(horizon) / spec.val_frac);
            if (test_frac > 0) need = std::max(need, static_cast<double>(horizon) / test_frac);
            minimum = static_cast<Index>(std::ceil(need));
            if (spec.val_frac <= 0.0 || test_frac <= 1e-12) minimum = -1;
            while (minimum > 0 && !ranges_fit(ratio_ranges(minimum, spec.train_frac, spec.val_frac), minimum,
                                               lookback, horizon)) {
                ++minimum;
            }
        }
    } else {
        const Index month = spec.split == SplitScheme::etth ? kHoursPerMonth : 4 * kHoursPerMonth;
        r = {{0, 12 * month}, {12 * month, 16 * month}, {16 * month, 20 * month}};
        minimum = 20 * month;
    }
    if (!ranges_fit(r, rows, lookback, horizon)) {
        std::string msg = "series has " + std::to_string(rows) + " rows; the " + split_name(spec.split) +
                          " split with lookback " + std::to_string(lookback) + " and horizon " +
                          std::to_string(horizon);
        if (minimum > 0) {
            msg += " needs at least " + std::to_string(minimum) + " rows";
        } else {
            msg += " cannot give every split a window (val and test fractions must be positive)";
        }
        throw DataError(msg);
    }
    return r;
}

RowRange window_range(RowRange split_range, Index lookback) {
    return {std::max<Index>(0, split_range.begin - lookback), split_range.end};
}

Matrix<double> Standardizer::apply(const Matrix<double>& x) const {
    Matrix<double> out = x.rowwise() - mean.transpose();
    out.array().rowwise() /= stddev.transpose().array();
    return out;
}

Matrix<double> Standardizer::invert(const Matrix<double>& x) const {
    Matrix<double> out = x;
    out.array().rowwise() *= stddev.transpose().array();
    out.rowwise() += mean.transpose();
    return out;
}

Standardizer fit_standardizer(const Matrix<double>& series, RowRange train) {
    if (train.size() <= 0 || train.begin < 0 || train.end > series.rows()) {
        throw DataError("standardization needs a non-empty train range inside the series");
    }
    const auto rows = series.middleRows(train.begin, train.size());
    Standardizer s;
    s.mean = rows.colwise().mean().transpose();
    const Matrix<double> centred = rows.rowwise() - s.mean.transpose();
    s.stddev = centred.array().square().colwise().mean().sqrt().transpose();
    s.stddev = s.stddev.cwiseMax(1e-8);
    return s;
}

std::pair<Matrix<double>, Standardizer> standardize(const Matrix<double>& series, RowRange train) {
    Standardizer s = fit_standardizer(series, train);
    return {s.apply(series), std::move(s)};
}

WindowSet::WindowSet(std::shared_ptr<const Matrix<double>> series, RowRange range, Index lookback, Index horizon,
                     Index stride)
    : series_(std::move(series)), range_(range), lookback_(lookback), horizon_(horizon), stride_(stride) {
    if (!series_) throw DataError("window set needs a series");
    if (lookback < 1 || horizon < 1 || stride < 1) throw ConfigError("lookback, horizon and stride must be >= 1");
    if (range.begin < 0 || range.end > series_->rows() || range.begin > range.end) {
        throw DataError("window range [" + std::to_string(range.begin) + ", " + std::to_string(range.end) +
                        ") lies outside a series of " + std::to_string(series_->rows()) + " rows");
    }
    if (range.size() < lookback + horizon) {
        throw DataError("window range of " + std::to_string(range.size()) + " rows is shorter than lookback + horizon = " +
                        std::to_string(lookback + horizon));
    }
    count_ = (range.size() - lookback - horizon) / stride + 1;
}

WindowSample WindowSet::sample(Index i) const {
    return {history<double>(i), future<double>(i), origin(i)};
}

WindowSet windows(std::shared_ptr<const Matrix<double>> series, RowRange range, Index lookback, Index horizon,
                  Index stride) {
    return WindowSet(std::move(series), range, lookback, horizon, stride);
}

PreparedData prepare_data(const Matrix<double>& raw, const DatasetSpec& spec, Index lookback, Index horizon,
                          Index train_stride) {
    PreparedData data;
    data.ranges = split(raw.rows(), spec, lookback, horizon);
    data.scaler = fit_standardizer(raw, data.ranges.train);
    data.scaled = std::make_shared<const Matrix<double>>(data.scaler.apply(raw));
    data.splits.train = windows(data.scaled, data.ranges.train, lookback, horizon, train_stride);
    data.splits.val = windows(data.scaled, window_range(data.ranges.val, lookback), lookback, horizon);
    data.splits.test = windows(data.scaled, window_range(data.ranges.test, lookback), lookback, horizon);
    return data;
}

} // namespace patchcast
