//===- nn.hpp - Dense layers, softmax and Adam with exact backprop -------===//
#pragma once

#include "nvec/common.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <span>
#include <vector>

namespace nvec::nn {

/// Row-major real matrix; bias and activation vectors use `Vector`.
using Tensor2 = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class Activation { Tanh, Identity };

struct DenseLayer {
  Tensor2 weight; // out x in
  Vector bias;    // out
  Activation activation = Activation::Tanh;

  size_t in_dim() const { return static_cast<size_t>(weight.cols()); }
  size_t out_dim() const { return static_cast<size_t>(weight.rows()); }
};

enum class Init { Zero, Xavier, SmallXavier, Uniform005 };

struct Mlp {
  std::vector<DenseLayer> layers;

  size_t in_dim() const { return layers.front().in_dim(); }
  size_t out_dim() const { return layers.back().out_dim(); }

  /// dims = {in, hidden..., out}; hidden layers use `hidden`, the last layer
  /// `output`.
  static Mlp create(const std::vector<size_t> &dims, Activation hidden, Activation output,
                    Rng &rng, Init init = Init::Xavier, Init last_init = Init::Xavier);
};

struct MlpCache {
  std::vector<Vector> inputs;  // input of each layer
  std::vector<Vector> outputs; // post-activation output of each layer
};

struct MlpGrads {
  std::vector<Tensor2> weight;
  std::vector<Vector> bias;

  static MlpGrads zeros_like(const Mlp &mlp);
  void set_zero();
  MlpGrads &operator+=(const MlpGrads &o);
  MlpGrads &operator*=(double s);
};

/// y = mlp(x). `cache` (optional) receives what backward() needs.
Vector forward(const Mlp &mlp, const Vector &x, MlpCache *cache = nullptr);

/// Accumulates parameter gradients into `grads` and returns dL/dx.
Vector backward(const Mlp &mlp, const MlpCache &cache, const Vector &dy, MlpGrads &grads);

/// Numerically stable softmax (max-subtracted).
Vector softmax(const Vector &logits);

/// Throws DimMismatch with `what` unless actual == expected.
void require_dim(size_t actual, size_t expected, const char *what);
/// Throws InvalidArgument if any entry is NaN/Inf.
void require_finite(const Vector &v, const char *what);

struct AdamConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One parameter block for the optimizer. When `rows` is set the block is a
/// row-sparse embedding table: only the listed rows (of width `cols`) are
/// updated and their moments advanced (lazy Adam).
struct ParamSlot {
  std::span<double> value;
  std::span<const double> grad;
  size_t cols = 1;
  const std::vector<size_t> *rows = nullptr;
};

struct AdamState {
  AdamConfig config;
  int64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// Standard bias-corrected Adam over all slots; increments t.
void adam_step(std::span<const ParamSlot> slots, AdamState &state);

/// Appends slots pairing every layer's parameters with `grads`.
void append_slots(Mlp &mlp, const MlpGrads &grads, std::vector<ParamSlot> &out);

nlohmann::json to_json(const Mlp &mlp);
Mlp mlp_from_json(const nlohmann::json &j);

nlohmann::json to_json(const AdamState &s);
AdamState adam_from_json(const nlohmann::json &j);

/// Exact-reload helpers for flat double arrays.
nlohmann::json doubles_to_json(std::span<const double> v);
void doubles_from_json(const nlohmann::json &j, std::span<double> out, const char *what);

} // namespace nvec::nn
