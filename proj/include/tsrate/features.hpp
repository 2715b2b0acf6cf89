#pragma once

// Frozen block encoder: a fixed vector of summary statistics per block.

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tsrate {

/// Anything that maps a block's values to a fixed-length feature vector.
class BlockEncoder {
 public:
  virtual ~BlockEncoder() = default;
  virtual int dim() const = 0;
  virtual std::string version() const = 0;
  virtual std::vector<double> encode(std::span<const double> values) const = 0;
};

/// 24 statistics. The block is z-normalized first (a constant block maps to
/// all zeros); only the raw mean and raw std see the original scale.
///
///   0 mean (raw)           1 std (raw, population)
///   2 min                  3 max
///   4 median               5 interquartile range
///   6 OLS slope over the whole block       7 OLS R^2
///   8 mean |first difference|              9 std of first differences
///  10-13 autocorrelation at lags 1, 2, 4, 8
///  14-16 top-3 spectral power shares (non-DC bins, descending)
///  17-19 their frequencies in cycles per sample (k / L)
///  20 spectral entropy, normalized to [0, 1]
///  21 zero-crossing rate of the detrended block
///  22 skewness             23 excess kurtosis
class StatsEncoder : public BlockEncoder {
 public:
  static constexpr int kDim = 24;
  static constexpr std::string_view kVersion = "stats24-v1";
  static constexpr int kMinLength = 4;

  int dim() const override { return kDim; }
  std::string version() const override { return std::string(kVersion); }
  std::vector<double> encode(std::span<const double> values) const override;
};

}  // namespace tsrate
