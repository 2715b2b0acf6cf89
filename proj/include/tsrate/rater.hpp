#pragma once

// The learned block rater: frozen features -> 3-layer MLP -> scalar score.
//
//   h1 = relu(layernorm(W1 x + b1))
//   h2 = relu(layernorm(W2 h1 + b2)) + h1
//   s  = w3 . h2 + b3
//
// All parameters live in one flat vector so that optimizers (plain gradient
// descent, sign updates, meta updates) can treat them uniformly.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tsrate/core.hpp"
#include "tsrate/features.hpp"

namespace tsrate {

struct RaterArch {
  int input_dim = StatsEncoder::kDim;
  int hidden = 256;
  int layers = 3;

  std::size_t param_count() const;
  friend bool operator==(const RaterArch&, const RaterArch&) = default;
};

inline constexpr int kRaterFormatVersion = 1;
inline constexpr double kLayerNormEps = 1e-5;

struct RaterWeights {
  RaterArch arch;
  Criterion criterion = Criterion::kTrend;
  std::string encoder_version{StatsEncoder::kVersion};
  std::uint64_t seed = 0;
  int version = kRaterFormatVersion;
  std::vector<double> params;
};

/// Uniform +-sqrt(6 / (fan_in + fan_out)) for affine weights, zero biases,
/// layer-norm gains 1 and offsets 0.
RaterWeights init_rater(const RaterArch& arch, Criterion criterion, std::uint64_t seed);

void validate(const RaterWeights& weights);

/// One training comparison in feature space.
struct PairExample {
  std::vector<double> features_i;
  std::vector<double> features_j;
  double p = 0.5;  // confidence that i is better
};

double rater_forward(const RaterWeights& weights, std::span<const double> features);

/// Scores many feature vectors. Matches rater_forward on each up to rounding
/// (the matrix kernels differ with the batch width).
std::vector<double> rater_forward_batch(const RaterWeights& weights,
                                        std::span<const std::vector<double>> features);

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;  // same layout as RaterWeights::params
};

/// Mean over the batch of p*softplus(-d) + (1 - p)*softplus(d), d = s(i) - s(j),
/// with its exact gradient. `params` overrides weights.params when non-empty so
/// optimizers can evaluate at trial points without copying metadata.
LossAndGrad pairwise_loss_and_grad(const RaterWeights& weights,
                                   std::span<const PairExample> batch,
                                   std::span<const double> params = {});

double pairwise_loss(const RaterWeights& weights, std::span<const PairExample> batch,
                     std::span<const double> params = {});

struct TrainConfig {
  double learning_rate = 0.05;
  int epochs = 50;
  int batch_size = 16;
  std::uint64_t seed = 0;
};

struct TrainResult {
  RaterWeights weights;
  std::vector<double> epoch_loss;  // mean minibatch loss per epoch
};

/// Minibatch gradient descent over seeded shuffles of `pairs`. Starts from
/// `init` when given, else from init_rater(arch, criterion, config.seed).
TrainResult train_single(std::span<const PairExample> pairs, const TrainConfig& config,
                         Criterion criterion, const RaterWeights* init = nullptr);

/// Fraction of non-tie pairs (p != 0.5) where sign(s_i - s_j) == sign(2p - 1).
/// A zero score difference counts as wrong.
double pairwise_accuracy(const RaterWeights& weights, std::span<const PairExample> pairs);

/// Accuracy from precomputed score differences; same conventions as above.
double pairwise_accuracy_from_deltas(std::span<const double> deltas,
                                     std::span<const double> confidences);

/// Binary format: "TSRATERW" magic, u64 header length, JSON header, u64
/// parameter count, then little-endian IEEE-754 doubles.
void save_rater(const RaterWeights& weights, const std::filesystem::path& path);
RaterWeights load_rater(const std::filesystem::path& path,
                        std::string_view expected_encoder_version = StatsEncoder::kVersion);

}  // namespace tsrate
