#pragma once

#include "patchcast/numerics.hpp"

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace patchcast {

/// Environment variable naming the directory that relative dataset paths are
/// resolved against.
inline constexpr const char* kDataDirEnv = "PATCHCAST_DATA_DIR";

enum class Frequency { hourly, quarter_hourly };
enum class SplitScheme { etth, ettm, ratio };

struct DatasetSpec {
    std::filesystem::path path;
    Frequency freq = Frequency::hourly;
    SplitScheme split = SplitScheme::ratio;
    double train_frac = 0.7;
    double val_frac = 0.1;
    std::vector<std::string> target_columns;  // empty: every numeric column

    void validate() const;
};

/// Raw comma-separated table: header plus string cells, no type checks.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv_table(const std::filesystem::path& path);

/// A multivariate series: timestamps kept as metadata, values rows×M.
struct Series {
    std::vector<std::string> names;
    std::vector<std::string> timestamps;
    Matrix<double> values;
};

std::filesystem::path resolve_dataset_path(const std::filesystem::path& path);

Series load_csv(const std::filesystem::path& path, const std::vector<std::string>& columns = {});
Series load_csv(const DatasetSpec& spec);

// Writes the same layout load_csv reads: a `date` column then the values.
void write_series_csv(const std::filesystem::path& path, const Series& series);

struct RowRange {
    Index begin = 0;
    Index end = 0;

    Index size() const { return end - begin; }
    bool contains(Index row) const { return row >= begin && row < end; }
    bool operator==(const RowRange&) const = default;
};

struct SplitRanges {
    RowRange train;
    RowRange val;
    RowRange test;
};

/// Train/val/test row ranges. ETT-hourly and ETT-15min use the fixed
/// 12/4/4-month borders; `ratio` cuts by fraction with the test split taking
/// the remainder. Val and test windows borrow up to `lookback` rows of history
/// from the preceding split (see window_range).
SplitRanges split(Index rows, const DatasetSpec& spec, Index lookback, Index horizon);

// Rows a split's windows may read: its own rows plus `lookback` rows of
// history in front of it.
RowRange window_range(RowRange split_range, Index lookback);

struct Standardizer {
    Vector<double> mean;
    Vector<double> stddev;

    Matrix<double> apply(const Matrix<double>& x) const;
    Matrix<double> invert(const Matrix<double>& x) const;
};

/// Column statistics over the train rows only; σ is floored at 1e-8.
Standardizer fit_standardizer(const Matrix<double>& series, RowRange train);

std::pair<Matrix<double>, Standardizer> standardize(const Matrix<double>& series, RowRange train);

struct WindowSample {
    Matrix<double> history;  // L×M
    Matrix<double> future;   // T×M
    Index origin = 0;        // first history row
};

/// Lazy view of every (history, future) pair of a row range:
/// history rows [i, i+L), future rows [i+L, i+L+T).
class WindowSet {
public:
    WindowSet() = default;
    WindowSet(std::shared_ptr<const Matrix<double>> series, RowRange range, Index lookback, Index horizon,
              Index stride = 1);

    Index size() const { return count_; }
    bool empty() const { return count_ == 0; }
    Index lookback() const { return lookback_; }
    Index horizon() const { return horizon_; }
    Index variables() const { return series_ ? series_->cols() : 0; }
    RowRange range() const { return range_; }
    Index stride() const { return stride_; }

    Index origin(Index i) const { return range_.begin + i * stride_; }
    WindowSample sample(Index i) const;

    template <class S>
    Matrix<S> history(Index i) const {
        return series_->middleRows(origin(i), lookback_).template cast<S>();
    }

    template <class S>
    Matrix<S> future(Index i) const {
        return series_->middleRows(origin(i) + lookback_, horizon_).template cast<S>();
    }

    class iterator {
    public:
        iterator(const WindowSet* set, Index i) : set_(set), i_(i) {}
        WindowSample operator*() const { return set_->sample(i_); }
        iterator& operator++() {
            ++i_;
            return *this;
        }
        bool operator==(const iterator& other) const { return i_ == other.i_; }

    private:
        const WindowSet* set_;
        Index i_;
    };

    iterator begin() const { return {this, 0}; }
    iterator end() const { return {this, count_}; }

private:
    std::shared_ptr<const Matrix<double>> series_;
    RowRange range_;
    Index lookback_ = 0;
    Index horizon_ = 0;
    Index stride_ = 1;
    Index count_ = 0;
};

WindowSet windows(std::shared_ptr<const Matrix<double>> series, RowRange range, Index lookback, Index horizon,
                  Index stride = 1);

struct DataSplits {
    WindowSet train;
    WindowSet val;
    WindowSet test;
};

/// Standardized windows for all three splits, stats from the train rows.
struct PreparedData {
    std::shared_ptr<const Matrix<double>> scaled;
    Standardizer scaler;
    SplitRanges ranges;
    DataSplits splits;
};

PreparedData prepare_data(const Matrix<double>& raw, const DatasetSpec& spec, Index lookback, Index horizon,
                          Index train_stride = 1);

} // namespace patchcast
