#include <cctype>
#include <cstdio>
#include <string>
#include <vector>

#include "tsrate/judge.hpp"

namespace tsrate {
namespace {

constexpr std::string_view kTrendTemplate =
    R"(Compare two time series and choose the one which exhibits a more significant and well-defined trend, e.g., a clear directional movement (upward or downward) over time that is sustained across the series, with minimal noise, anomalies, or random fluctuations.

For example:
A time series with a steady upward trend, such as [10, 15, 20, 25, 30], would be considered significant and well-defined.
Conversely, a time series with frequent random spikes or drops, such as [10, 50, 20, 5, 30], is less likely to exhibit a well-defined trend.
A flat time series with little to no change, such as [10, 10, 10, 10, 10], would generally be considered to lack a significant trend.

Aspects that should NOT influence your judgement:
The source or origin of the time series data.
The length of the time series.
The order in which the time series are presented.

The time series may have similar characteristics, but you should still make a relative judgment and choose the label of the preferred time series.

[Option {label_a}]
{series_a}

[Option {label_b}]
{series_b}

Now you have to choose between either {label_a} or {label_b}. Respond only with a single word.)";

constexpr std::string_view kFrequencyTemplate =
    R"(Compare two time series and choose the one which exhibits more significant and well-defined frequency or cyclical patterns, e.g., regular oscillations, periodic behavior, or repetitive cycles that are consistent across the series, with minimal noise or randomness.

For example:
A time series with a consistent cyclical pattern, such as [10, 20, 10, 20, 10, 20], would be considered significant and well-defined.
Conversely, a time series with irregular peaks or inconsistent cycles, such as [10, 50, 20, 5, 30], is less likely to exhibit a well-defined cyclical pattern.
A flat time series with little to no change, such as [10, 10, 10, 10, 10], would generally be considered to lack significant frequency or cyclical behavior.

Aspects that should NOT influence your judgement:
The source or origin of the time series data.
The length of the time series.
The order in which the time series are presented.

The time series may have similar characteristics, but you should still make a relative judgment and choose the label of the preferred time series.

[Option {label_a}]
{series_a}

[Option {label_b}]
{series_b}

Now you have to choose between either {label_a} or {label_b}. Respond only with a single word.)";

constexpr std::string_view kAmplitudeTemplate =
    R"(Compare two time series and choose the one which exhibits more significant and well-defined amplitude, e.g., consistent and large variations in the range of values across the series, reflecting strong oscillations or signal intensity with minimal noise or randomness.

For example:
A time series with a large and consistent amplitude, such as [0, 10, -10, 10, -10, 10], would be considered significant and well-defined.
Conversely, a time series with small or inconsistent amplitude, such as [1, 2, 1, 2, 3, 2], is less likely to exhibit well-defined amplitude behavior.
A flat time series with minimal changes, such as [5, 5, 5, 5, 5], would generally be considered to lack significant amplitude.

Aspects that should NOT influence your judgement:
The source or origin of the time series data.
The length of the time series.
The order in which the time series are presented.

The time series may have similar characteristics, but you should still make a relative judgment and choose the label of the preferred time series.

[Option {label_a}]
{series_a}

[Option {label_b}]
{series_b}

Now you have to choose between either {label_a} or {label_b}. Respond only with a single word.)";

constexpr std::string_view kPatternTemplate =
    R"(Compare two time series and choose the one that demonstrates a clearer and more consistent pattern, exhibiting regular fluctuations, trends, or cycles, while avoiding excessive noise, random fluctuations, or sudden irregularities. Look for data that reflects some form of underlying structure, such as trend, seasonality, or cyclical behavior.

For example:
Trend Pattern: A time series with a clear and steady upward or downward trend, such as [5, 8, 11, 14, 17] and [43, 36, 29, 22, 15, 8, 1], demonstrates a well-defined, consistent direction.
Cyclic Pattern: A time series showing periodic cycles, like [30, 25, 20, 25, 30, 35, 40, 35, 30] and [1, 3, 1, 3, 1], repeating every few steps, suggests cyclical behavior over time.
Stationary Pattern: A time series where the values fluctuate around a stable mean without a clear upward or downward trend, such as [10, 12, 11, 10, 13] and [10, 10, 10, 10, 10], shows consistent, predictable variation.
Mixed Pattern: A time series that combines trends with cyclical or seasonal behavior, such as [10, 15, 20, 25, 30, 28, 25, 23, 28, 33, 38, 43, 41, 38, 36], where both a rising trend and periodic fluctuations are visible, would indicate a complex but structured pattern.

On the other hand, avoid time series with the following characteristics:
Random or Irregular Fluctuations: A time series with large, unpredictable jumps, such as [10, 50, 20, 5, 80], is erratic and lacks consistent patterns.
Noise-Dominant Data: A time series filled with random noise or frequent outliers, like [20, 5, 15, 100, 3], introduces significant unpredictability that makes it hard to discern any underlying trend or pattern.
Missing or Incomplete Patterns: A time series with large gaps or inconsistent segments, such as [15, ?, ?, 30, 40], is incomplete and might mislead pattern identification.

Remember, focus on time series that show clear, repeatable patterns of behavior. Even if the series contains some minor fluctuations, the overall trend, cycle, or stationary nature should be identifiable.

Aspects that should NOT influence your judgment:
The source or origin of the time series data.
The length of the time series.
The order in which the time series are presented.

[Option {label_a}]
{series_a}

[Option {label_b}]
{series_b}

Now you have to choose between either {label_a} or {label_b}. Respond only with a single word.)";

void replace_all(std::string& text, std::string_view needle, std::string_view value) {
  std::size_t pos = 0;
  while ((pos = text.find(needle, pos)) != std::string::npos) {
    text.replace(pos, needle.size(), value);
    pos += value.size();
  }
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool is_trim_char(char c) {
  return std::isspace(static_cast<unsigned char>(c)) ||
         std::ispunct(static_cast<unsigned char>(c));
}

}  // namespace

std::string_view prompt_template(Criterion criterion) {
  switch (criterion) {
    case Criterion::kTrend:
      return kTrendTemplate;
    case Criterion::kFrequency:
      return kFrequencyTemplate;
    case Criterion::kAmplitude:
      return kAmplitudeTemplate;
    case Criterion::kPattern:
      return kPatternTemplate;
  }
  throw InvalidInput("unknown criterion");
}

std::string format_series(std::span<const double> values, int max_points) {
  const std::size_t n =
      std::min(values.size(), static_cast<std::size_t>(std::max(max_points, 0)));
  std::string out = "[";
  char buf[32];
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out += ", ";
    std::snprintf(buf, sizeof(buf), "%.4g", values[i]);
    out += buf;
  }
  out += "]";
  return out;
}

std::string render_prompt(Criterion criterion, std::span<const double> series_a,
                          std::span<const double> series_b, std::string_view label_a,
                          std::string_view label_b, int max_series_points) {
  if (series_a.size() < 2 || series_b.size() < 2) {
    throw InvalidInput("render_prompt: series need at least 2 points");
  }
  if (label_a.empty() || label_b.empty() || lower(label_a) == lower(label_b)) {
    throw InvalidInput("render_prompt: labels must be distinct and non-empty");
  }
  std::string text(prompt_template(criterion));
  // Series first: labels never contain the series placeholders.
  replace_all(text, "{series_a}", format_series(series_a, max_series_points));
  replace_all(text, "{series_b}", format_series(series_b, max_series_points));
  replace_all(text, "{label_a}", label_a);
  replace_all(text, "{label_b}", label_b);
  return text;
}

std::string parse_choice(std::string_view response, std::string_view label_a,
                         std::string_view label_b) {
  const std::string a = lower(label_a);
  const std::string b = lower(label_b);
  std::size_t lo = 0, hi = response.size();
  while (lo < hi && is_trim_char(response[lo])) ++lo;
  while (hi > lo && is_trim_char(response[hi - 1])) --hi;
  const std::string trimmed = lower(response.substr(lo, hi - lo));
  if (trimmed == a) return std::string(label_a);
  if (trimmed == b) return std::string(label_b);

  // Fall back to whole-word matches, e.g. "Option B".
  bool saw_a = false, saw_b = false;
  std::string word;
  auto flush = [&] {
    if (word == a) saw_a = true;
    if (word == b) saw_b = true;
    word.clear();
  };
  for (char c : trimmed) {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '_') {
      word += c;
    } else {
      flush();
    }
  }
  flush();
  if (saw_a != saw_b) return std::string(saw_a ? label_a : label_b);
  throw InvalidInput("unparseable verdict: '" + std::string(response) + "'");
}

}  // namespace tsrate
