#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mhai/dataset.hpp"
#include "mhai/error.hpp"
#include "mhai/hash.hpp"
#include "mhai/stream.hpp"

namespace mhai {

struct NetShape {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden{64, 32};
  std::size_t output_dim = kNumClasses;

  bool operator==(const NetShape&) const = default;

  /// input, hidden..., output
  std::vector<std::size_t> dims() const {
    std::vector<std::size_t> d{input_dim};
    d.insert(d.end(), hidden.begin(), hidden.end());
    d.push_back(output_dim);
    return d;
  }

  std::size_t layers() const { return hidden.size() + 1; }

  std::size_t param_count() const {
    auto d = dims();
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < d.size(); ++l) n += d[l] * d[l + 1] + d[l + 1];
    return n;
  }

  void validate() const {
    if (input_dim < 1) throw DomainError("input_dim must be >= 1");
    for (auto h : hidden)
      if (h < 1) throw DomainError("hidden widths must be >= 1");
    if (output_dim != kNumClasses) throw DomainError("output_dim must be 11");
  }
};

/// Flat parameters: per layer, the out x in weight matrix (row-major) then
/// the out biases.
struct ModelParams {
  NetShape shape;
  std::vector<double> theta;

  bool operator==(const ModelParams&) const = default;

  void validate() const {
    shape.validate();
    if (theta.size() != shape.param_count())
      throw DomainError("theta has " + std::to_string(theta.size()) + " entries, shape needs " +
                        std::to_string(shape.param_count()));
    for (double v : theta)
      if (!std::isfinite(v)) throw DomainError("theta contains a non-finite value");
  }
};

inline ModelParams from_flat(const NetShape& shape, std::vector<double> theta) {
  ModelParams p{shape, std::move(theta)};
  p.validate();
  return p;
}

struct TrainConfig {
  std::size_t max_epochs = 107;
  std::size_t batch_size = 32;
  double learning_rate = 0.05;
  std::size_t early_stop_patience = 10;
  std::size_t lr_reduce_patience = 5;
  double lr_reduce_factor = 0.1;
  std::uint64_t seed = 7;
  std::vector<std::size_t> hidden{64, 32};

  void validate() const {
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(learning_rate > 0)) throw ConfigError("train.learning_rate must be > 0");
    if (!(lr_reduce_factor > 0 && lr_reduce_factor < 1)) throw ConfigError("train.lr_reduce_factor must be in (0, 1)");
    if (early_stop_patience < 1) throw ConfigError("train.early_stop_patience must be >= 1");
    if (lr_reduce_patience < 1) throw ConfigError("train.lr_reduce_patience must be >= 1");
    for (auto h : hidden)
      if (h < 1) throw ConfigError("train.hidden widths must be >= 1");
  }
};

/// Dense feature matrix (row-major) with labels.
struct LabeledData {
  std::size_t dim = 0;
  std::vector<double> x;
  std::vector<int> y;

  std::size_t size() const { return y.size(); }
  bool empty() const { return y.empty(); }
  std::span<const double> row(std::size_t i) const { return {x.data() + i * dim, dim}; }

  void push(std::span<const double> features, int label) {
    if (features.size() != dim) throw DomainError("feature dimension mismatch");
    x.insert(x.end(), features.begin(), features.end());
    y.push_back(label);
  }
};

/// Feature vector in the subset's canonical stream order.
inline std::vector<double> features_of(const SampleRecord& r, const StreamSubset& subset) {
  std::vector<double> f;
  f.reserve(subset.size());
  for (const auto& s : subset.members()) {
    auto it = r.values.find(s);
    if (it == r.values.end()) throw DomainError("record lacks stream " + s.name);
    f.push_back(it->second);
  }
  return f;
}

inline LabeledData to_labeled(const PatientDataset& ds, const StreamSubset& subset) {
  LabeledData d;
  d.dim = subset.size();
  d.x.reserve(ds.size() * d.dim);
  d.y.reserve(ds.size());
  for (const auto& r : ds.records) d.push(features_of(r, subset), r.label);
  return d;
}

inline LabeledData concat(const std::vector<LabeledData>& parts) {
  LabeledData out;
  for (const auto& p : parts) {
    if (p.empty()) continue;
    if (out.dim == 0) out.dim = p.dim;
    if (p.dim != out.dim) throw DomainError("cannot concatenate data of different dimensions");
    out.x.insert(out.x.end(), p.x.begin(), p.x.end());
    out.y.insert(out.y.end(), p.y.begin(), p.y.end());
  }
  return out;
}

/// He-style uniform init: W ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)), b = 0.
inline ModelParams init_params(const NetShape& shape, std::uint64_t seed) {
  shape.validate();
  ModelParams p{shape, std::vector<double>(shape.param_count(), 0.0)};
  std::mt19937_64 rng(seed);
  auto d = shape.dims();
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < d.size(); ++l) {
    const double limit = std::sqrt(6.0 / static_cast<double>(d[l]));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (std::size_t i = 0; i < d[l] * d[l + 1]; ++i) p.theta[off + i] = u(rng);
    off += d[l] * d[l + 1] + d[l + 1];
  }
  return p;
}

namespace detail {

// Scratch buffers for one forward/backward pass.
struct NetWorkspace {
  std::vector<std::size_t> dims;
  std::vector<std::size_t> offsets;  // start of each layer's weights
  std::vector<std::vector<double>> act;  // act[0] = input, act[l] = post-activation
  std::vector<std::vector<double>> delta;

  explicit NetWorkspace(const NetShape& shape) : dims(shape.dims()) {
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      offsets.push_back(off);
      off += dims[l] * dims[l + 1] + dims[l + 1];
    }
    act.resize(dims.size());
    delta.resize(dims.size());
    for (std::size_t l = 0; l < dims.size(); ++l) {
      act[l].resize(dims[l]);
      delta[l].resize(dims[l]);
    }
  }

  // Fills act; the last layer holds softmax probabilities.
  void forward(const std::vector<double>& theta, std::span<const double> x) {
    std::copy(x.begin(), x.end(), act[0].begin());
    const std::size_t L = dims.size() - 1;
    for (std::size_t l = 0; l < L; ++l) {
      const std::size_t in = dims[l], out = dims[l + 1];
      const double* W = theta.data() + offsets[l];
      const double* b = W + in * out;
      const double* a = act[l].data();
      double* z = act[l + 1].data();
      for (std::size_t o = 0; o < out; ++o) {
        double s = b[o];
        const double* w = W + o * in;
        for (std::size_t i = 0; i < in; ++i) s += w[i] * a[i];
        z[o] = s;
      }
      if (l + 1 < L) {
        for (std::size_t o = 0; o < out; ++o) z[o] = z[o] > 0 ? z[o] : 0.0;
      } else {
        double m = *std::max_element(z, z + out);
        double sum = 0;
        for (std::size_t o = 0; o < out; ++o) sum += (z[o] = std::exp(z[o] - m));
        for (std::size_t o = 0; o < out; ++o) z[o] /= sum;
      }
    }
  }

  // Adds scale * d(-log p[label])/d(theta) into g. Requires forward() first.
  void backward(const std::vector<double>& theta, int label, double scale, std::vector<double>& g) {
    const std::size_t L = dims.size() - 1;
    auto& top = delta[L];
    for (std::size_t o = 0; o < dims[L]; ++o) top[o] = scale * act[L][o];
    top[static_cast<std::size_t>(label)] -= scale;
    for (std::size_t l = L; l-- > 0;) {
      const std::size_t in = dims[l], out = dims[l + 1];
      const double* W = theta.data() + offsets[l];
      double* gW = g.data() + offsets[l];
      double* gb = gW + in * out;
      const double* a = act[l].data();
      const double* d = delta[l + 1].data();
      for (std::size_t o = 0; o < out; ++o) {
        double* row = gW + o * in;
        for (std::size_t i = 0; i < in; ++i) row[i] += d[o] * a[i];
        gb[o] += d[o];
      }
      if (l == 0) break;
      double* prev = delta[l].data();
      std::fill(prev, prev + in, 0.0);
      for (std::size_t o = 0; o < out; ++o) {
        const double* w = W + o * in;
        for (std::size_t i = 0; i < in; ++i) prev[i] += w[i] * d[o];
      }
      for (std::size_t i = 0; i < in; ++i)
        if (!(a[i] > 0)) prev[i] = 0.0;  // ReLU'
    }
  }

  const std::vector<double>& probs() const { return act.back(); }
};

inline std::size_t argmax(std::span<const double> p) {
  return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

}  // namespace detail

/// Class probabilities: ReLU hidden layers, softmax output.
inline std::vector<double> forward(const ModelParams& params, std::span<const double> x) {
  if (x.size() != params.shape.input_dim)
    throw DomainError("input has " + std::to_string(x.size()) + " features, model expects " +
                      std::to_string(params.shape.input_dim));
  detail::NetWorkspace ws(params.shape);
  ws.forward(params.theta, x);
  return ws.probs();
}

/// Argmax class, lowest index on ties.
inline int predict_class(const ModelParams& params, std::span<const double> x) {
  auto p = forward(params, x);
  return static_cast<int>(detail::argmax(p));
}

inline void check_batch(const ModelParams& params, const LabeledData& batch) {
  if (batch.empty()) throw DomainError("empty batch");
  if (batch.dim != params.shape.input_dim) throw DomainError("batch dimension does not match model input");
  for (int y : batch.y)
    if (!valid_label(y)) throw DomainError("label " + std::to_string(y) + " outside 0..10");
}

inline constexpr double kProbFloor = 1e-12;

/// Mean sparse categorical cross-entropy.
inline double loss(const ModelParams& params, const LabeledData& batch) {
  check_batch(params, batch);
  detail::NetWorkspace ws(params.shape);
  double total = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    ws.forward(params.theta, batch.row(i));
    total += -std::log(std::max(ws.probs()[static_cast<std::size_t>(batch.y[i])], kProbFloor));
  }
  return total / static_cast<double>(batch.size());
}

/// Gradient of loss() with respect to theta.
inline std::vector<double> grad(const ModelParams& params, const LabeledData& batch) {
  check_batch(params, batch);
  detail::NetWorkspace ws(params.shape);
  std::vector<double> g(params.theta.size(), 0.0);
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    ws.forward(params.theta, batch.row(i));
    ws.backward(params.theta, batch.y[i], scale, g);
  }
  return g;
}

inline double accuracy(const ModelParams& params, const LabeledData& data) {
  if (data.empty()) return 0.0;
  detail::NetWorkspace ws(params.shape);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    ws.forward(params.theta, data.row(i));
    hit += static_cast<int>(detail::argmax(ws.probs())) == data.y[i];
  }
  return static_cast<double>(hit) / static_cast<double>(data.size());
}

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0;            // mean training loss over the epoch's batches
  double train_accuracy = 0;
  double val_accuracy = 0;    // equals train_accuracy when no validation set
  double best_val_accuracy = 0;
  double learning_rate = 0;
};

struct TrainResult {
  ModelParams params;  // best-accuracy parameters
  std::vector<EpochStats> history;
  std::vector<std::string> warnings;
};

/// Mini-batch SGD from `init`. The monitored metric is validation accuracy,
/// or training accuracy when `val` is empty. The learning rate is multiplied
/// by lr_reduce_factor after lr_reduce_patience epochs without improvement;
/// training stops after early_stop_patience such epochs.
inline TrainResult train(const ModelParams& init, const LabeledData& data, const LabeledData& val,
                         const TrainConfig& cfg) {
  cfg.validate();
  init.validate();
  check_batch(init, data);
  if (!val.empty()) check_batch(init, val);

  TrainResult result{init, {}, {}};
  {
    std::vector<int> labels = data.y;
    std::sort(labels.begin(), labels.end());
    if (std::unique(labels.begin(), labels.end()) - labels.begin() == 1)
      result.warnings.push_back("degenerate training data: single class " + std::to_string(data.y.front()));
  }
  if (cfg.max_epochs == 0) return result;

  ModelParams cur = init;
  detail::NetWorkspace ws(cur.shape);
  std::vector<double> g(cur.theta.size());
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(cfg.seed);
  double lr = cfg.learning_rate;
  double best = -1;
  std::size_t since_best = 0, since_lr = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::fill(g.begin(), g.end(), 0.0);
      const double scale = 1.0 / static_cast<double>(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        ws.forward(cur.theta, data.row(i));
        epoch_loss -= std::log(std::max(ws.probs()[static_cast<std::size_t>(data.y[i])], kProbFloor));
        ws.backward(cur.theta, data.y[i], scale, g);
      }
      for (std::size_t j = 0; j < g.size(); ++j) cur.theta[j] -= lr * g[j];
    }
    for (double v : cur.theta)
      if (!std::isfinite(v)) {
        result.warnings.push_back("training diverged at epoch " + std::to_string(epoch));
        return result;
      }

    EpochStats st;
    st.epoch = epoch;
    st.loss = epoch_loss / static_cast<double>(data.size());
    st.train_accuracy = accuracy(cur, data);
    st.val_accuracy = val.empty() ? st.train_accuracy : accuracy(cur, val);
    st.learning_rate = lr;
    if (st.val_accuracy > best) {
      best = st.val_accuracy;
      result.params = cur;
      since_best = since_lr = 0;
    } else {
      ++since_best;
      ++since_lr;
    }
    st.best_val_accuracy = best;
    result.history.push_back(st);
    if (since_best >= cfg.early_stop_patience) break;
    if (since_lr >= cfg.lr_reduce_patience) {
      lr *= cfg.lr_reduce_factor;
      since_lr = 0;
    }
  }
  return result;
}

inline TrainResult train(const LabeledData& data, const TrainConfig& cfg, const LabeledData& val = {}) {
  if (data.empty()) throw DomainError("train on empty data");
  NetShape shape{data.dim, cfg.hidden, kNumClasses};
  return train(init_params(shape, cfg.seed), data, val, cfg);
}

// ---------------------------------------------------------------------------
// Serialization
//
//   MHAIPARAMS 1 <subset-key> <d0>,<d1>,...,<dL> <count>\n
//   <count> little-endian IEEE-754 binary64 values

namespace detail {

inline void put_f64(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>(bits >> (8 * i)));
}

inline double get_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

inline std::string encode_params(const ModelParams& p, const std::string& subset_key) {
  std::string out = "MHAIPARAMS 1 " + subset_key + " ";
  auto d = p.shape.dims();
  for (std::size_t i = 0; i < d.size(); ++i) out += (i ? "," : "") + std::to_string(d[i]);
  out += " " + std::to_string(p.theta.size()) + "\n";
  for (double v : p.theta) detail::put_f64(out, v);
  return out;
}

struct DecodedParams {
  std::string subset_key;
  ModelParams params;
};

inline DecodedParams decode_params(std::string_view bytes) {
  auto nl = bytes.find('\n');
  if (nl == std::string_view::npos) throw ParseError("params file: missing header line");
  std::istringstream header{std::string(bytes.substr(0, nl))};
  std::string magic, version, key, dims;
  std::size_t count = 0;
  if (!(header >> magic >> version >> key >> dims >> count) || magic != "MHAIPARAMS" || version != "1")
    throw ParseError("params file: bad header");
  std::vector<std::size_t> d;
  std::stringstream ds(dims);
  for (std::string tok; std::getline(ds, tok, ',');) {
    auto v = detail::parse_number<std::size_t>(tok);
    if (!v) throw ParseError("params file: bad shape '" + dims + "'");
    d.push_back(*v);
  }
  if (d.size() < 2) throw ParseError("params file: shape needs at least two layers");
  NetShape shape{d.front(), {d.begin() + 1, d.end() - 1}, d.back()};
  auto body = bytes.substr(nl + 1);
  if (body.size() != count * 8) throw ParseError("params file: payload size does not match count");
  ModelParams p{shape, std::vector<double>(count)};
  const auto* raw = reinterpret_cast<const unsigned char*>(body.data());
  for (std::size_t i = 0; i < count; ++i) p.theta[i] = detail::get_f64(raw + 8 * i);
  try {
    p.validate();
  } catch (const DomainError& e) {
    throw ParseError(std::string("params file: ") + e.what());
  }
  return {key, std::move(p)};
}

/// Content hash of the shape and theta (independent of the subset label).
inline std::uint64_t params_digest(const ModelParams& p) {
  Fnv1a64 h;
  h.text("params");
  for (auto d : p.shape.dims()) h.u64(d);
  for (double v : p.theta) h.u64(std::bit_cast<std::uint64_t>(v));
  return h.value();
}

}  // namespace mhai
