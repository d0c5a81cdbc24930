#pragma once

#include <string>
#include <vector>

namespace atvi {

/// Observed count series: channels x time, non-negative.
struct TimeSeriesData {
  std::vector<double> times;
  std::vector<std::string> channel_names;
  std::vector<std::vector<double>> series;  // [channel][time]

  int channels() const { return static_cast<int>(series.size()); }
  int length() const { return static_cast<int>(times.size()); }
  void validate() const;

  /// CSV with a header row; first column is the time index, remaining
  /// columns are channels.
  static TimeSeriesData read_csv(const std::string& path);
  void write_csv(const std::string& path) const;
};

}  // namespace atvi
