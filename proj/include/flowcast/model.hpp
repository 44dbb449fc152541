#pragma once

#include <array>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "flowcast/dataset.hpp"
#include "flowcast/tape.hpp"

namespace flowcast {

/// Architecture of the surrogate forecaster. Hidden widths are independent of
/// the node count, so one parameter set serves every snapshot of a stream.
struct ModelConfig {
  std::size_t c1 = 64;
  std::size_t c2 = 64;
  std::size_t c3 = 64;
  std::size_t kernel = 3;
  std::size_t input_steps = kInputSteps;    // T
  std::size_t horizon = kHorizonSteps;      // K
  std::size_t features = 1;                 // F

  std::size_t conv_steps() const { return input_steps - kernel + 1; }
  /// Width of the pre-readout representation: conv-branch time*channels plus
  /// the flattened raw-input skip connection.
  std::size_t feature_width() const { return conv_steps() * c3 + input_steps * features; }

  void validate() const {
    if (c1 == 0 || c2 == 0 || c3 == 0 || kernel == 0 || input_steps == 0 || horizon == 0 ||
        features == 0) {
      throw ConfigError("ModelConfig: all dimensions must be positive");
    }
    if (kernel > input_steps) {
      throw ConfigError("ModelConfig: kernel length exceeds input steps");
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

/// All learnable tensors. flat_index order is the member order below,
/// row-major within each tensor; it is stable across save/load.
struct ModelParams {
  ModelConfig config;
  Tensor gcn1_w1, gcn1_w2;  // [F x C1]
  Tensor conv_kernel;       // [k x C1 x C2]
  Tensor conv_bias;         // [C2]
  Tensor gcn2_w1, gcn2_w2;  // [C2 x C3]
  Tensor fc_w;              // [D x K]
  Tensor fc_b;              // [K]

  template <typename F>
  void for_each_tensor(F&& f) {
    f("gcn1_w1", gcn1_w1);
    f("gcn1_w2", gcn1_w2);
    f("conv_kernel", conv_kernel);
    f("conv_bias", conv_bias);
    f("gcn2_w1", gcn2_w1);
    f("gcn2_w2", gcn2_w2);
    f("fc_w", fc_w);
    f("fc_b", fc_b);
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    const_cast<ModelParams*>(this)->for_each_tensor(
        [&](const char* name, Tensor& t) { f(name, static_cast<const Tensor&>(t)); });
  }

  static ModelParams zeros(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams p;
    p.config = cfg;
    p.gcn1_w1 = Tensor({cfg.features, cfg.c1});
    p.gcn1_w2 = Tensor({cfg.features, cfg.c1});
    p.conv_kernel = Tensor({cfg.kernel, cfg.c1, cfg.c2});
    p.conv_bias = Tensor({cfg.c2});
    p.gcn2_w1 = Tensor({cfg.c2, cfg.c3});
    p.gcn2_w2 = Tensor({cfg.c2, cfg.c3});
    p.fc_w = Tensor({cfg.feature_width(), cfg.horizon});
    p.fc_b = Tensor({cfg.horizon});
    return p;
  }

  /// Seeded uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer,
  /// biases included with their layer's bound.
  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed) {
    ModelParams p = zeros(cfg);
    Rng rng(splitmix64(seed ^ 0xF00DCAFEull));
    auto fill = [&](Tensor& t, std::size_t fan_in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      double* v = t.mutable_data();
      for (std::size_t i = 0; i < t.size(); ++i) v[i] = rng.uniform(-bound, bound);
    };
    fill(p.gcn1_w1, cfg.features);
    fill(p.gcn1_w2, cfg.features);
    fill(p.conv_kernel, cfg.kernel * cfg.c1);
    fill(p.conv_bias, cfg.kernel * cfg.c1);
    fill(p.gcn2_w1, cfg.c2);
    fill(p.gcn2_w2, cfg.c2);
    fill(p.fc_w, cfg.feature_width());
    fill(p.fc_b, cfg.feature_width());
    return p;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const char*, const Tensor& t) { n += t.size(); });
    return n;
  }

  std::vector<double> to_flat() const {
    std::vector<double> flat;
    flat.reserve(parameter_count());
    for_each_tensor([&](const char*, const Tensor& t) {
      flat.insert(flat.end(), t.data(), t.data() + t.size());
    });
    return flat;
  }

  void from_flat(std::span<const double> flat) {
    if (flat.size() != parameter_count()) {
      throw ShapeError("ModelParams::from_flat: expected " + std::to_string(parameter_count()) +
                       " values, got " + std::to_string(flat.size()));
    }
    std::size_t off = 0;
    for_each_tensor([&](const char*, Tensor& t) {
      double* v = t.mutable_data();
      std::copy(flat.begin() + off, flat.begin() + off + t.size(), v);
      off += t.size();
    });
  }
};

struct ModelLeaves {
  ValueId gcn1_w1, gcn1_w2, conv_kernel, conv_bias, gcn2_w1, gcn2_w2, fc_w, fc_b;

  std::array<ValueId, 8> in_flat_order() const {
    return {gcn1_w1, gcn1_w2, conv_kernel, conv_bias, gcn2_w1, gcn2_w2, fc_w, fc_b};
  }
};

inline ModelLeaves mount(Tape& tape, const ModelParams& p, bool needs_grad = true) {
  ModelLeaves l{};
  l.gcn1_w1 = tape.leaf(p.gcn1_w1, needs_grad);
  l.gcn1_w2 = tape.leaf(p.gcn1_w2, needs_grad);
  l.conv_kernel = tape.leaf(p.conv_kernel, needs_grad);
  l.conv_bias = tape.leaf(p.conv_bias, needs_grad);
  l.gcn2_w1 = tape.leaf(p.gcn2_w1, needs_grad);
  l.gcn2_w2 = tape.leaf(p.gcn2_w2, needs_grad);
  l.fc_w = tape.leaf(p.fc_w, needs_grad);
  l.fc_b = tape.leaf(p.fc_b, needs_grad);
  return l;
}

/// Gradients of all parameters after backward(), flattened in flat_index
/// order. Parameters untouched by the loss contribute zeros.
inline std::vector<double> collect_gradients(Tape& tape, const ModelLeaves& leaves) {
  std::vector<double> flat;
  for (ValueId id : leaves.in_flat_order()) {
    const Tensor& g = tape.grad(id);
    flat.insert(flat.end(), g.data(), g.data() + g.size());
  }
  return flat;
}

/// One graph convolution: relu(A h W1 + h W2). The adjacency is a constant;
/// gradients flow to h, W1 and W2.
inline ValueId gcn_layer(Tape& tape, ValueId h, ValueId adjacency, ValueId w1, ValueId w2) {
  ValueId ah = tape.matmul(adjacency, h);
  return tape.relu(tape.add(tape.matmul(ah, w1), tape.matmul(h, w2)));
}

struct ForwardIds {
  ValueId features;  // [B, N, D] pre-readout representation
  ValueId output;    // [B, N, K]
};

/// Builds the full forecasting pipeline on the tape for a batched input
/// x[B, N, T, F]:
///   (1) time-distributed graph convolution, (2) valid temporal convolution,
///   (3) second graph convolution on the remaining steps, (4) per-node
///   flatten + skip-concat with the raw input, (5) shared linear readout.
inline ForwardIds build_forward(Tape& tape, const ModelLeaves& p, const ModelConfig& cfg,
                                ValueId adjacency, ValueId x) {
  const Tensor& tx = tape.value(x);
  if (tx.rank() != 4) {
    throw ShapeError("forward: input must be [BxNxTxF], got " + shape_string(tx));
  }
  const std::size_t b = tx.dim(0), n = tx.dim(1), t = tx.dim(2), f = tx.dim(3);
  if (t != cfg.input_steps || f != cfg.features) {
    throw ShapeError("forward/input: window " + shape_string(tx) + " does not match config T=" +
                     std::to_string(cfg.input_steps) + " F=" + std::to_string(cfg.features));
  }
  const Tensor& ta = tape.value(adjacency);
  if (ta.rank() != 2 || ta.dim(0) != n || ta.dim(1) != n) {
    throw ShapeError("forward/adjacency: expected [" + std::to_string(n) + "x" +
                     std::to_string(n) + "], got " + shape_string(ta));
  }
  const std::size_t t2 = cfg.conv_steps();

  // Stage 1: first GCN, shared over batch and time.
  ValueId xn = tape.swap01(x);                              // [N, B, T, F]
  ValueId ah = tape.matmul(adjacency, tape.reshape(xn, {n, b * t * f}));
  ValueId h1 = tape.relu(tape.add(tape.matmul(tape.reshape(ah, {n * b * t, f}), p.gcn1_w1),
                                  tape.matmul(tape.reshape(xn, {n * b * t, f}), p.gcn1_w2)));

  // Stage 2: temporal convolution per node.
  ValueId conv = tape.conv1d_time(tape.reshape(h1, {n * b, t, cfg.c1}), p.conv_kernel, p.conv_bias);

  // Stage 3: second GCN on the shrunk time axis.
  ValueId ah2 = tape.matmul(adjacency, tape.reshape(conv, {n, b * t2 * cfg.c2}));
  ValueId h2 = tape.relu(
      tape.add(tape.matmul(tape.reshape(ah2, {n * b * t2, cfg.c2}), p.gcn2_w1),
               tape.matmul(tape.reshape(conv, {n * b * t2, cfg.c2}), p.gcn2_w2)));

  // Stage 4: flatten time x channels per node, skip-concat the raw window.
  ValueId hb = tape.swap01(tape.reshape(h2, {n, b, t2 * cfg.c3}));  // [B, N, T2*C3]
  ValueId feats = tape.concat_last(hb, tape.reshape(x, {b, n, t * f}));

  // Stage 5: shared readout.
  ValueId out = tape.linear(feats, p.fc_w, p.fc_b);
  return {feats, out};
}

inline Tensor forward_batch(const ModelParams& params, const Tensor& adjacency, const Tensor& x) {
  Tape tape;
  ModelLeaves leaves = mount(tape, params, false);
  ValueId a = tape.constant(adjacency);
  ValueId xv = tape.constant(x);
  return tape.value(build_forward(tape, leaves, params.config, a, xv).output);
}

/// Forecast for one window: x[N, T, F] -> [N, K].
inline Tensor forward(const ModelParams& params, const Tensor& adjacency, const Tensor& x) {
  if (x.rank() != 3) throw ShapeError("forward: input must be [NxTxF], got " + shape_string(x));
  Tensor batched = x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
  Tensor out = forward_batch(params, adjacency, batched);
  return out.reshaped({out.dim(1), out.dim(2)});
}

inline Tensor extract_features_batch(const ModelParams& params, const Tensor& adjacency,
                                     const Tensor& x) {
  Tape tape;
  ModelLeaves leaves = mount(tape, params, false);
  ValueId a = tape.constant(adjacency);
  ValueId xv = tape.constant(x);
  return tape.value(build_forward(tape, leaves, params.config, a, xv).features);
}

/// The pre-readout representation psi(x): x[N, T, F] -> [N, D].
inline Tensor extract_features(const ModelParams& params, const Tensor& adjacency, const Tensor& x) {
  if (x.rank() != 3) {
    throw ShapeError("extract_features: input must be [NxTxF], got " + shape_string(x));
  }
  Tensor batched = x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
  Tensor out = extract_features_batch(params, adjacency, batched);
  return out.reshaped({out.dim(1), out.dim(2)});
}

/// Mean squared error of the batched forecast against the batch targets,
/// built on the tape so gradients are available.
inline ValueId build_loss(Tape& tape, const ModelLeaves& leaves, const ModelConfig& cfg,
                          ValueId adjacency, const WindowBatch& batch) {
  ValueId x = tape.constant(batch.inputs);
  ForwardIds fwd = build_forward(tape, leaves, cfg, adjacency, x);
  return tape.l2_loss(fwd.output, batch.targets);
}

inline double loss(const ModelParams& params, const Tensor& adjacency, const WindowBatch& batch) {
  Tape tape;
  ModelLeaves leaves = mount(tape, params, false);
  ValueId a = tape.constant(adjacency);
  return tape.value(build_loss(tape, leaves, params.config, a, batch))[0];
}

// ---------------------------------------------------------------------------
// Checkpoint container: magic, format version, config block, parameter array
// in flat_index order, then optional sections (currently: Fisher diagonal).
// All integers and floats little-endian, 64-bit.

namespace detail_ckpt {

constexpr char kMagic[8] = {'F', 'C', 'S', 'T', 'M', 'D', 'L', '1'};
constexpr std::uint64_t kFormatVersion = 1;
constexpr std::uint64_t kSectionFisher = 1;

inline void write_u64(std::ofstream& f, std::uint64_t v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_doubles(std::ofstream& f, const double* v, std::size_t n) {
  f.write(reinterpret_cast<const char*>(v), static_cast<std::streamsize>(n * sizeof(double)));
}
inline std::uint64_t read_u64(std::ifstream& f, const std::string& what) {
  std::uint64_t v = 0;
  f.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!f) throw IoError("checkpoint: truncated while reading " + what);
  return v;
}
inline void read_doubles(std::ifstream& f, double* v, std::size_t n, const std::string& what) {
  f.read(reinterpret_cast<char*>(v), static_cast<std::streamsize>(n * sizeof(double)));
  if (!f) throw IoError("checkpoint: truncated while reading " + what);
}

inline void write_checkpoint(const std::filesystem::path& path, const ModelParams& params,
                             const double* fisher, std::size_t fisher_len,
                             std::uint64_t fisher_samples) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot write " + path.string());
  f.write(kMagic, sizeof(kMagic));
  write_u64(f, kFormatVersion);
  const ModelConfig& c = params.config;
  for (std::uint64_t v : {static_cast<std::uint64_t>(c.c1), static_cast<std::uint64_t>(c.c2),
                          static_cast<std::uint64_t>(c.c3), static_cast<std::uint64_t>(c.kernel),
                          static_cast<std::uint64_t>(c.input_steps),
                          static_cast<std::uint64_t>(c.horizon),
                          static_cast<std::uint64_t>(c.features)}) {
    write_u64(f, v);
  }
  const std::vector<double> flat = params.to_flat();
  write_u64(f, flat.size());
  write_doubles(f, flat.data(), flat.size());
  write_u64(f, fisher ? 1 : 0);  // section count
  if (fisher) {
    write_u64(f, kSectionFisher);
    write_u64(f, fisher_samples);
    write_u64(f, fisher_len);
    write_doubles(f, fisher, fisher_len);
  }
  if (!f) throw IoError("checkpoint: write failed for " + path.string());
}

inline ModelParams read_checkpoint(const std::filesystem::path& path, std::vector<double>* fisher,
                                   std::uint64_t* fisher_samples) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open " + path.string());
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("checkpoint: bad magic in " + path.string());
  }
  const std::uint64_t version = read_u64(f, "version");
  if (version != kFormatVersion) {
    throw ConfigError("checkpoint: unsupported format version " + std::to_string(version));
  }
  ModelConfig cfg;
  cfg.c1 = read_u64(f, "c1");
  cfg.c2 = read_u64(f, "c2");
  cfg.c3 = read_u64(f, "c3");
  cfg.kernel = read_u64(f, "kernel");
  cfg.input_steps = read_u64(f, "input_steps");
  cfg.horizon = read_u64(f, "horizon");
  cfg.features = read_u64(f, "features");
  cfg.validate();
  ModelParams params = ModelParams::zeros(cfg);
  const std::uint64_t count = read_u64(f, "parameter count");
  if (count != params.parameter_count()) {
    throw ConfigError("checkpoint: parameter count " + std::to_string(count) +
                      " does not match config (" + std::to_string(params.parameter_count()) + ")");
  }
  std::vector<double> flat(count);
  read_doubles(f, flat.data(), count, "parameters");
  params.from_flat(flat);
  const std::uint64_t sections = read_u64(f, "section count");
  for (std::uint64_t s = 0; s < sections; ++s) {
    const std::uint64_t tag = read_u64(f, "section tag");
    if (tag == kSectionFisher) {
      const std::uint64_t samples = read_u64(f, "fisher samples");
      const std::uint64_t len = read_u64(f, "fisher length");
      std::vector<double> values(len);
      read_doubles(f, values.data(), len, "fisher values");
      if (fisher) *fisher = std::move(values);
      if (fisher_samples) *fisher_samples = samples;
    } else {
      throw ConfigError("checkpoint: unknown section tag " + std::to_string(tag));
    }
  }
  return params;
}

}  // namespace detail_ckpt

inline void save_params(const ModelParams& params, const std::filesystem::path& path) {
  detail_ckpt::write_checkpoint(path, params, nullptr, 0, 0);
}

inline ModelParams load_params(const std::filesystem::path& path) {
  return detail_ckpt::read_checkpoint(path, nullptr, nullptr);
}

/// Load with an architecture expectation; a differing stored config is a
/// ConfigError.
inline ModelParams load_params(const std::filesystem::path& path, const ModelConfig& expected) {
  ModelParams p = detail_ckpt::read_checkpoint(path, nullptr, nullptr);
  if (!(p.config == expected)) {
    throw ConfigError("checkpoint: stored architecture differs from the expected config");
  }
  return p;
}

}  // namespace flowcast
