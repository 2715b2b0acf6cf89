#include "tsrate/rater.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "tsrate/bradley_terry.hpp"
#include "tsrate/random.hpp"

namespace tsrate {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using ConstRowMap = Eigen::Map<const RowMatrix>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstVecMap = Eigen::Map<const Vector>;
using VecMap = Eigen::Map<Vector>;

namespace {

// Offsets of each tensor inside the flat parameter vector.
struct Layout {
  std::size_t w1, b1, g1, c1, w2, b2, g2, c2, w3, b3, total;
  int f, h;

  explicit Layout(const RaterArch& a) : f(a.input_dim), h(a.hidden) {
    const std::size_t F = f, H = h;
    w1 = 0;
    b1 = w1 + H * F;
    g1 = b1 + H;
    c1 = g1 + H;
    w2 = c1 + H;
    b2 = w2 + H * H;
    g2 = b2 + H;
    c2 = g2 + H;
    w3 = c2 + H;
    b3 = w3 + H;
    total = b3 + 1;
  }
};

struct LayerNormCache {
  Matrix xhat;
  Eigen::RowVectorXd inv_std;
};

// Column-wise layer norm: each column is one example.
Matrix layer_norm(const Matrix& z, const ConstVecMap& gain, const ConstVecMap& offset,
                  LayerNormCache& cache) {
  const double h = static_cast<double>(z.rows());
  const Eigen::RowVectorXd mu = z.colwise().sum() / h;
  Matrix centered = z.rowwise() - mu;
  const Eigen::RowVectorXd var = centered.array().square().colwise().sum() / h;
  cache.inv_std = (var.array() + kLayerNormEps).rsqrt();
  cache.xhat = centered.array().rowwise() * cache.inv_std.array();
  return (cache.xhat.array().colwise() * gain.array()).colwise() + offset.array();
}

Matrix layer_norm_backward(const Matrix& dy, const ConstVecMap& gain,
                           const LayerNormCache& cache, VecMap dgain, VecMap doffset) {
  const double h = static_cast<double>(dy.rows());
  dgain += (dy.array() * cache.xhat.array()).rowwise().sum().matrix();
  doffset += dy.rowwise().sum();
  const Matrix dxhat = dy.array().colwise() * gain.array();
  const Eigen::RowVectorXd mean_dxhat = dxhat.colwise().sum() / h;
  const Eigen::RowVectorXd mean_dxhat_xhat =
      (dxhat.array() * cache.xhat.array()).colwise().sum() / h;
  Matrix dz = dxhat.rowwise() - mean_dxhat;
  dz.array() -= cache.xhat.array().rowwise() * mean_dxhat_xhat.array();
  return dz.array().rowwise() * cache.inv_std.array();
}

struct ForwardCache {
  Matrix x, y1, a1, y2, h2;
  LayerNormCache ln1, ln2;
  Eigen::RowVectorXd out;
};

void forward(const Layout& L, std::span<const double> p, const Matrix& x, ForwardCache& c) {
  const ConstRowMap w1(p.data() + L.w1, L.h, L.f);
  const ConstVecMap b1(p.data() + L.b1, L.h), g1(p.data() + L.g1, L.h), c1(p.data() + L.c1, L.h);
  const ConstRowMap w2(p.data() + L.w2, L.h, L.h);
  const ConstVecMap b2(p.data() + L.b2, L.h), g2(p.data() + L.g2, L.h), c2(p.data() + L.c2, L.h);
  const ConstVecMap w3(p.data() + L.w3, L.h);
  const double b3 = p[L.b3];

  c.x = x;
  Matrix z1 = w1 * x;
  z1.colwise() += b1;
  c.y1 = layer_norm(z1, g1, c1, c.ln1);
  c.a1 = c.y1.cwiseMax(0.0);
  Matrix z2 = w2 * c.a1;
  z2.colwise() += b2;
  c.y2 = layer_norm(z2, g2, c2, c.ln2);
  c.h2 = c.y2.cwiseMax(0.0) + c.a1;
  c.out = (w3.transpose() * c.h2).array() + b3;
}

// Accumulates d(loss)/d(params) into grad given d(loss)/d(out) per column.
void backward(const Layout& L, std::span<const double> p, const ForwardCache& c,
              const Eigen::RowVectorXd& dout, std::span<double> grad) {
  const ConstRowMap w2(p.data() + L.w2, L.h, L.h);
  const ConstVecMap g1(p.data() + L.g1, L.h), g2(p.data() + L.g2, L.h);
  const ConstVecMap w3(p.data() + L.w3, L.h);

  RowMap dw1(grad.data() + L.w1, L.h, L.f);
  VecMap db1(grad.data() + L.b1, L.h), dg1(grad.data() + L.g1, L.h), dc1(grad.data() + L.c1, L.h);
  RowMap dw2(grad.data() + L.w2, L.h, L.h);
  VecMap db2(grad.data() + L.b2, L.h), dg2(grad.data() + L.g2, L.h), dc2(grad.data() + L.c2, L.h);
  VecMap dw3(grad.data() + L.w3, L.h);

  dw3 += c.h2 * dout.transpose();
  grad[L.b3] += dout.sum();

  const Matrix dh2 = w3 * dout;
  const Matrix dy2 = (c.y2.array() > 0.0).select(dh2, 0.0);
  const Matrix dz2 = layer_norm_backward(dy2, g2, c.ln2, dg2, dc2);
  dw2 += dz2 * c.a1.transpose();
  db2 += dz2.rowwise().sum();

  Matrix da1 = dh2;  // residual path
  da1 += w2.transpose() * dz2;
  const Matrix dy1 = (c.y1.array() > 0.0).select(da1, 0.0);
  const Matrix dz1 = layer_norm_backward(dy1, g1, c.ln1, dg1, dc1);
  dw1 += dz1 * c.x.transpose();
  db1 += dz1.rowwise().sum();
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

std::span<const double> resolve(const RaterWeights& w, std::span<const double> params) {
  if (params.empty()) return w.params;
  if (params.size() != w.params.size()) {
    throw InvalidInput("parameter override has the wrong size");
  }
  return params;
}

void check_features(const RaterWeights& w, std::span<const double> f) {
  if (f.size() != static_cast<std::size_t>(w.arch.input_dim)) {
    throw InvalidInput("feature vector has " + std::to_string(f.size()) +
                       " entries, rater expects " + std::to_string(w.arch.input_dim));
  }
}

// Columns 0..B-1 are the i sides, B..2B-1 the j sides.
Matrix stack_pairs(const RaterWeights& w, std::span<const PairExample> batch) {
  const auto b = static_cast<Eigen::Index>(batch.size());
  Matrix x(w.arch.input_dim, 2 * b);
  for (Eigen::Index k = 0; k < b; ++k) {
    const auto& ex = batch[k];
    check_features(w, ex.features_i);
    check_features(w, ex.features_j);
    if (!(ex.p >= 0.0 && ex.p <= 1.0)) throw InvalidInput("pair confidence outside [0, 1]");
    for (int d = 0; d < w.arch.input_dim; ++d) {
      if (!std::isfinite(ex.features_i[d]) || !std::isfinite(ex.features_j[d])) {
        throw InvalidInput("non-finite feature value");
      }
      x(d, k) = ex.features_i[d];
      x(d, b + k) = ex.features_j[d];
    }
  }
  return x;
}

}  // namespace

std::size_t RaterArch::param_count() const { return Layout(*this).total; }

RaterWeights init_rater(const RaterArch& arch, Criterion criterion, std::uint64_t seed) {
  if (arch.input_dim < 1 || arch.hidden < 1 || arch.layers != 3) {
    throw InvalidInput("unsupported rater architecture");
  }
  const Layout L(arch);
  RaterWeights w;
  w.arch = arch;
  w.criterion = criterion;
  w.seed = seed;
  w.params.assign(L.total, 0.0);
  CounterRng rng(seed, 0x494E4954ULL);
  auto fill = [&](std::size_t offset, std::size_t count, double fan_in, double fan_out) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (std::size_t k = 0; k < count; ++k) w.params[offset + k] = rng.uniform(-limit, limit);
  };
  const std::size_t F = arch.input_dim, H = arch.hidden;
  fill(L.w1, H * F, F, H);
  fill(L.w2, H * H, H, H);
  fill(L.w3, H, H, 1);
  std::fill_n(w.params.begin() + L.g1, H, 1.0);
  std::fill_n(w.params.begin() + L.g2, H, 1.0);
  return w;
}

void validate(const RaterWeights& weights) {
  if (weights.params.size() != weights.arch.param_count()) {
    throw InvalidInput("rater has " + std::to_string(weights.params.size()) +
                       " parameters, architecture needs " +
                       std::to_string(weights.arch.param_count()));
  }
  for (double v : weights.params) {
    if (!std::isfinite(v)) throw InvalidInput("rater has non-finite parameters");
  }
}

std::vector<double> rater_forward_batch(const RaterWeights& weights,
                                        std::span<const std::vector<double>> features) {
  const Layout L(weights.arch);
  if (weights.params.size() != L.total) validate(weights);
  std::vector<double> out;
  out.reserve(features.size());
  // Fixed-size chunks keep memory bounded; each column is independent.
  constexpr std::size_t kChunk = 256;
  ForwardCache cache;
  for (std::size_t start = 0; start < features.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, features.size() - start);
    Matrix x(L.f, static_cast<Eigen::Index>(n));
    for (std::size_t k = 0; k < n; ++k) {
      check_features(weights, features[start + k]);
      for (int d = 0; d < L.f; ++d) x(d, static_cast<Eigen::Index>(k)) = features[start + k][d];
    }
    forward(L, weights.params, x, cache);
    for (std::size_t k = 0; k < n; ++k) out.push_back(cache.out(static_cast<Eigen::Index>(k)));
  }
  return out;
}

double rater_forward(const RaterWeights& weights, std::span<const double> features) {
  std::vector<std::vector<double>> one{std::vector<double>(features.begin(), features.end())};
  return rater_forward_batch(weights, one).front();
}

LossAndGrad pairwise_loss_and_grad(const RaterWeights& weights,
                                   std::span<const PairExample> batch,
                                   std::span<const double> params) {
  if (batch.empty()) throw InvalidInput("pairwise loss: empty batch");
  const Layout L(weights.arch);
  const auto p = resolve(weights, params);
  if (p.size() != L.total) validate(weights);
  const Matrix x = stack_pairs(weights, batch);
  ForwardCache cache;
  forward(L, p, x, cache);

  const auto b = static_cast<Eigen::Index>(batch.size());
  const double inv_b = 1.0 / static_cast<double>(b);
  LossAndGrad result;
  result.grad.assign(L.total, 0.0);
  Eigen::RowVectorXd dout(2 * b);
  double loss = 0.0;
  for (Eigen::Index k = 0; k < b; ++k) {
    const double d = cache.out(k) - cache.out(b + k);
    const double pk = batch[k].p;
    loss += pk * softplus(-d) + (1.0 - pk) * softplus(d);
    const double dd = (sigmoid(d) - pk) * inv_b;
    dout(k) = dd;
    dout(b + k) = -dd;
  }
  result.loss = loss * inv_b;
  if (!std::isfinite(result.loss)) throw std::runtime_error("pairwise loss is not finite");
  backward(L, p, cache, dout, result.grad);
  return result;
}

double pairwise_loss(const RaterWeights& weights, std::span<const PairExample> batch,
                     std::span<const double> params) {
  if (batch.empty()) throw InvalidInput("pairwise loss: empty batch");
  const Layout L(weights.arch);
  const auto p = resolve(weights, params);
  const Matrix x = stack_pairs(weights, batch);
  ForwardCache cache;
  forward(L, p, x, cache);
  const auto b = static_cast<Eigen::Index>(batch.size());
  double loss = 0.0;
  for (Eigen::Index k = 0; k < b; ++k) {
    const double d = cache.out(k) - cache.out(b + k);
    loss += batch[k].p * softplus(-d) + (1.0 - batch[k].p) * softplus(d);
  }
  return loss / static_cast<double>(b);
}

TrainResult train_single(std::span<const PairExample> pairs, const TrainConfig& config,
                         Criterion criterion, const RaterWeights* init) {
  if (pairs.empty()) throw InvalidInput("train_single: no training pairs");
  if (config.learning_rate < 0.0 || config.epochs < 0 || config.batch_size < 1) {
    throw InvalidInput("train_single: invalid training configuration");
  }
  TrainResult result;
  result.weights = init ? *init : init_rater(RaterArch{}, criterion, config.seed);
  validate(result.weights);

  std::vector<std::size_t> order(pairs.size());
  std::vector<PairExample> batch;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    CounterRng rng(config.seed, 0x45504F4348ULL + static_cast<std::uint64_t>(epoch));
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    int n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t k = start; k < end; ++k) batch.push_back(pairs[order[k]]);
      const LossAndGrad lg = pairwise_loss_and_grad(result.weights, batch);
      for (std::size_t k = 0; k < lg.grad.size(); ++k) {
        result.weights.params[k] -= config.learning_rate * lg.grad[k];
      }
      loss_sum += lg.loss;
      ++n_batches;
    }
    result.epoch_loss.push_back(loss_sum / n_batches);
  }
  return result;
}

double pairwise_accuracy_from_deltas(std::span<const double> deltas,
                                     std::span<const double> confidences) {
  if (deltas.size() != confidences.size()) throw InvalidInput("size mismatch");
  std::size_t total = 0, correct = 0;
  for (std::size_t k = 0; k < deltas.size(); ++k) {
    const double target = 2.0 * confidences[k] - 1.0;
    if (target == 0.0) continue;
    ++total;
    if ((deltas[k] > 0.0 && target > 0.0) || (deltas[k] < 0.0 && target < 0.0)) ++correct;
  }
  if (total == 0) throw InvalidInput("pairwise_accuracy: no non-tie pairs");
  return static_cast<double>(correct) / static_cast<double>(total);
}

double pairwise_accuracy(const RaterWeights& weights, std::span<const PairExample> pairs) {
  std::vector<std::vector<double>> feats;
  feats.reserve(2 * pairs.size());
  for (const auto& ex : pairs) feats.push_back(ex.features_i);
  for (const auto& ex : pairs) feats.push_back(ex.features_j);
  const auto scores = rater_forward_batch(weights, feats);
  std::vector<double> deltas(pairs.size()), conf(pairs.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    deltas[k] = scores[k] - scores[pairs.size() + k];
    conf[k] = pairs[k].p;
  }
  return pairwise_accuracy_from_deltas(deltas, conf);
}

namespace {

constexpr char kMagic[8] = {'T', 'S', 'R', 'A', 'T', 'E', 'R', 'W'};

void write_u64(std::ostream& out, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(buf, 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  if (!in) throw InvalidInput("truncated rater file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{buf[i]} << (8 * i);
  return v;
}

}  // namespace

void save_rater(const RaterWeights& weights, const std::filesystem::path& path) {
  validate(weights);
  const nlohmann::json header = {
      {"arch",
       {{"input_dim", weights.arch.input_dim},
        {"hidden", weights.arch.hidden},
        {"layers", weights.arch.layers},
        {"layer_norm", true},
        {"residual", "hidden"}}},
      {"criterion", to_string(weights.criterion)},
      {"encoder_version", weights.encoder_version},
      {"seed", weights.seed},
      {"version", weights.version},
      {"param_count", weights.params.size()}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  write_u64(out, weights.params.size());
  for (double v : weights.params) write_u64(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

RaterWeights load_rater(const std::filesystem::path& path,
                        std::string_view expected_encoder_version) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open rater file " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || !std::equal(magic, magic + 8, kMagic)) {
    throw InvalidInput(path.string() + " is not a rater weights file");
  }
  const std::uint64_t header_len = read_u64(in);
  if (header_len > (1u << 20)) throw InvalidInput("rater header too large");
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw InvalidInput("truncated rater header");
  const auto header = nlohmann::json::parse(text);

  RaterWeights w;
  w.arch.input_dim = header.at("arch").at("input_dim").get<int>();
  w.arch.hidden = header.at("arch").at("hidden").get<int>();
  w.arch.layers = header.at("arch").at("layers").get<int>();
  w.criterion = parse_criterion(header.at("criterion").get<std::string>());
  w.encoder_version = header.at("encoder_version").get<std::string>();
  w.seed = header.at("seed").get<std::uint64_t>();
  w.version = header.at("version").get<int>();
  if (w.version != kRaterFormatVersion) {
    throw InvalidInput("unsupported rater format version " + std::to_string(w.version));
  }
  if (!expected_encoder_version.empty() && w.encoder_version != expected_encoder_version) {
    throw InvalidInput("rater was trained with encoder '" + w.encoder_version +
                       "', expected '" + std::string(expected_encoder_version) + "'");
  }
  const std::uint64_t count = read_u64(in);
  if (count != w.arch.param_count() ||
      count != header.at("param_count").get<std::uint64_t>()) {
    throw InvalidInput("rater parameter count " + std::to_string(count) +
                       " does not match its architecture (" +
                       std::to_string(w.arch.param_count()) + ")");
  }
  w.params.resize(count);
  for (auto& v : w.params) v = std::bit_cast<double>(read_u64(in));
  validate(w);
  return w;
}

}  // namespace tsrate
