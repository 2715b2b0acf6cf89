#include "tsrate/features.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tsrate/core.hpp"
#include "tsrate/series_stats.hpp"

namespace tsrate {

std::vector<double> StatsEncoder::encode(std::span<const double> values) const {
  const std::size_t n = values.size();
  if (n < static_cast<std::size_t>(kMinLength)) {
    throw InvalidInput("encode: block needs at least 4 points");
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw InvalidInput("encode: non-finite value");
  }
  std::vector<double> f(kDim, 0.0);
  const double mean = stats::mean(values);
  const double sd = stats::population_std(values);
  f[0] = mean;
  f[1] = sd;

  const double first = values.front();
  const bool constant =
      std::all_of(values.begin(), values.end(), [&](double v) { return v == first; });
  if (constant || !(sd > 0.0)) return f;

  std::vector<double> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = (values[i] - mean) / sd;

  f[2] = *std::min_element(z.begin(), z.end());
  f[3] = *std::max_element(z.begin(), z.end());
  f[4] = stats::quantile(z, 0.5);
  f[5] = stats::quantile(z, 0.75) - stats::quantile(z, 0.25);

  const stats::LineFit line = stats::fit_line(z);
  f[6] = line.slope * static_cast<double>(n - 1);
  f[7] = line.r_squared;

  std::vector<double> diffs(n - 1);
  double abs_sum = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    diffs[i] = z[i + 1] - z[i];
    abs_sum += std::abs(diffs[i]);
  }
  f[8] = abs_sum / static_cast<double>(diffs.size());
  f[9] = stats::population_std(diffs);

  const int lags[] = {1, 2, 4, 8};
  for (int k = 0; k < 4; ++k) f[10 + k] = stats::autocorrelation(z, lags[k]);

  const std::vector<double> power = stats::power_spectrum(z);
  const double total = std::accumulate(power.begin(), power.end(), 0.0);
  if (total > 0.0) {
    std::vector<std::size_t> order(power.size());
    std::iota(order.begin(), order.end(), 0);
    // Ties resolve to the lower frequency.
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return power[a] > power[b]; });
    for (std::size_t k = 0; k < 3 && k < order.size(); ++k) {
      f[14 + k] = power[order[k]] / total;
      f[17 + k] = static_cast<double>(order[k] + 1) / static_cast<double>(n);
    }
    double entropy = 0.0;
    for (double p : power) {
      const double q = p / total;
      if (q > 0.0) entropy -= q * std::log(q);
    }
    f[20] = power.size() > 1 ? entropy / std::log(static_cast<double>(power.size())) : 0.0;
  }

  int crossings = 0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double a = line.residuals[i], b = line.residuals[i + 1];
    if ((a < 0.0 && b >= 0.0) || (a >= 0.0 && b < 0.0)) ++crossings;
  }
  f[21] = static_cast<double>(crossings) / static_cast<double>(n - 1);

  double m3 = 0.0, m4 = 0.0;
  for (double v : z) {
    m3 += v * v * v;
    m4 += v * v * v * v;
  }
  f[22] = m3 / static_cast<double>(n);
  f[23] = m4 / static_cast<double>(n) - 3.0;

  for (double& v : f) {
    if (!std::isfinite(v)) v = 0.0;
  }
  return f;
}

}  // namespace tsrate
