#include "tsrate/series_stats.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace tsrate::stats {

double mean(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

double population_std(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size()));
}

LineFit fit_line(std::span<const double> x) {
  LineFit fit;
  const std::size_t n = x.size();
  fit.residuals.assign(n, 0.0);
  if (n == 0) return fit;
  const double tbar = (static_cast<double>(n) - 1.0) / 2.0;
  const double ybar = mean(x);
  double stt = 0.0, sty = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dt = static_cast<double>(i) - tbar;
    const double dy = x[i] - ybar;
    stt += dt * dt;
    sty += dt * dy;
    syy += dy * dy;
  }
  fit.slope = stt > 0.0 ? sty / stt : 0.0;
  fit.intercept = ybar - fit.slope * tbar;
  double sse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = x[i] - (fit.intercept + fit.slope * static_cast<double>(i));
    fit.residuals[i] = r;
    sse += r * r;
  }
  fit.r_squared = syy > 0.0 ? std::clamp(1.0 - sse / syy, 0.0, 1.0) : 0.0;
  return fit;
}

double autocorrelation(std::span<const double> x, int lag) {
  const std::size_t n = x.size();
  if (lag <= 0 || static_cast<std::size_t>(lag) >= n) return 0.0;
  const double m = mean(x);
  double den = 0.0;
  for (double v : x) den += (v - m) * (v - m);
  if (!(den > 0.0)) return 0.0;
  double num = 0.0;
  for (std::size_t i = 0; i + lag < n; ++i) num += (x[i] - m) * (x[i + lag] - m);
  return num / den;
}

std::vector<double> power_spectrum(std::span<const double> x) {
  const std::size_t n = x.size();
  const double m = mean(x);
  std::vector<double> power;
  power.reserve(n / 2);
  for (std::size_t k = 1; k <= n / 2; ++k) {
    double re = 0.0, im = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      // Reduce k*t mod n so the angle stays exact in integers.
      const double angle = 2.0 * std::numbers::pi *
                           static_cast<double>((k * t) % n) / static_cast<double>(n);
      re += (x[t] - m) * std::cos(angle);
      im -= (x[t] - m) * std::sin(angle);
    }
    power.push_back(re * re + im * im);
  }
  return power;
}

SinusoidFit fit_sinusoid(std::span<const double> x, double step) {
  const std::size_t n = x.size();
  SinusoidFit best;
  best.residuals.assign(x.begin(), x.end());
  if (n < 4) return best;
  const double nn = static_cast<double>(n);
  double best_sse = 0.0;
  for (double v : x) best_sse += v * v;

  const int n_steps = static_cast<int>(std::floor((nn / 2.0 - 1.0) / step + 1e-9));
  std::vector<double> c(n), s(n);
  for (int j = 0; j <= n_steps; ++j) {
    const double f = 1.0 + step * j;
    double cc = 0.0, ss = 0.0, cs = 0.0, cy = 0.0, sy = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double angle = 2.0 * std::numbers::pi * f * static_cast<double>(t) / nn;
      c[t] = std::cos(angle);
      s[t] = std::sin(angle);
      cc += c[t] * c[t];
      ss += s[t] * s[t];
      cs += c[t] * s[t];
      cy += c[t] * x[t];
      sy += s[t] * x[t];
    }
    const double det = cc * ss - cs * cs;
    if (!(det > 1e-12 * cc * ss)) continue;
    const double a = (ss * cy - cs * sy) / det;
    const double b = (cc * sy - cs * cy) / det;
    double sse = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      const double r = x[t] - a * c[t] - b * s[t];
      sse += r * r;
    }
    if (sse < best_sse) {
      best_sse = sse;
      best.cycles = f;
      best.amplitude = std::hypot(a, b);
      for (std::size_t t = 0; t < n; ++t) best.residuals[t] = x[t] - a * c[t] - b * s[t];
    }
  }
  return best;
}

double quantile(std::vector<double> x, double q) {
  if (x.empty()) return 0.0;
  std::sort(x.begin(), x.end());
  const double pos = q * static_cast<double>(x.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, x.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return x[lo] + frac * (x[hi] - x[lo]);
}

}  // namespace tsrate::stats
