#include "nvec/nn.hpp"

#include <cmath>
#include <string>

namespace nvec::nn {
namespace {

void init_matrix(Tensor2 &w, Init init, Rng &rng) {
  double limit = 0.0;
  switch (init) {
  case Init::Zero:
    w.setZero();
    return;
  case Init::Xavier:
    limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    break;
  case Init::SmallXavier:
    limit = 0.01 * std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    break;
  case Init::Uniform005:
    limit = 0.05;
    break;
  }
  for (Eigen::Index i = 0; i < w.size(); ++i)
    w.data()[i] = rng.uniform(-limit, limit);
}

const char *activation_name(Activation a) { return a == Activation::Tanh ? "tanh" : "identity"; }

} // namespace

void require_dim(size_t actual, size_t expected, const char *what) {
  if (actual != expected)
    throw Error(ErrorCode::DimMismatch, std::string(what) + ": expected dimension " +
                                            std::to_string(expected) + ", got " +
                                            std::to_string(actual));
}

void require_finite(const Vector &v, const char *what) {
  if (!v.allFinite())
    throw Error(ErrorCode::InvalidArgument, std::string(what) + ": non-finite value");
}

Mlp Mlp::create(const std::vector<size_t> &dims, Activation hidden, Activation output, Rng &rng,
                Init init, Init last_init) {
  if (dims.size() < 2)
    throw Error(ErrorCode::InvalidArgument, "Mlp needs at least input and output dims");
  Mlp mlp;
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    DenseLayer layer;
    bool last = i + 2 == dims.size();
    layer.weight = Tensor2(dims[i + 1], dims[i]);
    init_matrix(layer.weight, last ? last_init : init, rng);
    layer.bias = Vector::Zero(static_cast<Eigen::Index>(dims[i + 1]));
    layer.activation = last ? output : hidden;
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

MlpGrads MlpGrads::zeros_like(const Mlp &mlp) {
  MlpGrads g;
  for (const auto &l : mlp.layers) {
    g.weight.push_back(Tensor2::Zero(l.weight.rows(), l.weight.cols()));
    g.bias.push_back(Vector::Zero(l.bias.size()));
  }
  return g;
}

void MlpGrads::set_zero() {
  for (auto &w : weight)
    w.setZero();
  for (auto &b : bias)
    b.setZero();
}

MlpGrads &MlpGrads::operator+=(const MlpGrads &o) {
  for (size_t i = 0; i < weight.size(); ++i) {
    weight[i] += o.weight[i];
    bias[i] += o.bias[i];
  }
  return *this;
}

MlpGrads &MlpGrads::operator*=(double s) {
  for (size_t i = 0; i < weight.size(); ++i) {
    weight[i] *= s;
    bias[i] *= s;
  }
  return *this;
}

Vector forward(const Mlp &mlp, const Vector &x, MlpCache *cache) {
  require_dim(static_cast<size_t>(x.size()), mlp.in_dim(), "Mlp input");
  if (cache) {
    cache->inputs.clear();
    cache->outputs.clear();
  }
  Vector h = x;
  for (const auto &layer : mlp.layers) {
    if (cache)
      cache->inputs.push_back(h);
    Vector z = layer.weight * h + layer.bias;
    if (layer.activation == Activation::Tanh)
      z = z.array().tanh();
    if (cache)
      cache->outputs.push_back(z);
    h = std::move(z);
  }
  require_finite(h, "Mlp output");
  return h;
}

Vector backward(const Mlp &mlp, const MlpCache &cache, const Vector &dy, MlpGrads &grads) {
  require_dim(static_cast<size_t>(dy.size()), mlp.out_dim(), "Mlp upstream gradient");
  Vector g = dy;
  for (size_t i = mlp.layers.size(); i-- > 0;) {
    const DenseLayer &layer = mlp.layers[i];
    if (layer.activation == Activation::Tanh)
      g = g.array() * (1.0 - cache.outputs[i].array().square());
    grads.weight[i].noalias() += g * cache.inputs[i].transpose();
    grads.bias[i] += g;
    g = layer.weight.transpose() * g;
  }
  return g;
}

Vector softmax(const Vector &logits) {
  double mx = logits.maxCoeff();
  Vector e = (logits.array() - mx).exp();
  return e / e.sum();
}

void adam_step(std::span<const ParamSlot> slots, AdamState &state) {
  if (state.m.empty()) {
    for (const auto &s : slots) {
      state.m.emplace_back(s.value.size(), 0.0);
      state.v.emplace_back(s.value.size(), 0.0);
    }
  }
  require_dim(state.m.size(), slots.size(), "Adam parameter blocks");
  for (size_t k = 0; k < slots.size(); ++k) {
    require_dim(slots[k].grad.size(), slots[k].value.size(), "Adam gradient block");
    require_dim(state.m[k].size(), slots[k].value.size(), "Adam moment block");
  }
  ++state.t;
  const AdamConfig &c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  auto update = [&](size_t k, size_t begin, size_t end) {
    const ParamSlot &s = slots[k];
    auto &m = state.m[k];
    auto &v = state.v[k];
    for (size_t i = begin; i < end; ++i) {
      double g = s.grad[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      s.value[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  };
  for (size_t k = 0; k < slots.size(); ++k) {
    const ParamSlot &s = slots[k];
    if (s.rows == nullptr) {
      update(k, 0, s.value.size());
    } else {
      for (size_t r : *s.rows)
        update(k, r * s.cols, (r + 1) * s.cols);
    }
  }
}

void append_slots(Mlp &mlp, const MlpGrads &grads, std::vector<ParamSlot> &out) {
  for (size_t i = 0; i < mlp.layers.size(); ++i) {
    auto &l = mlp.layers[i];
    out.push_back({std::span<double>(l.weight.data(), static_cast<size_t>(l.weight.size())),
                   std::span<const double>(grads.weight[i].data(),
                                           static_cast<size_t>(grads.weight[i].size())),
                   static_cast<size_t>(l.weight.cols()), nullptr});
    out.push_back({std::span<double>(l.bias.data(), static_cast<size_t>(l.bias.size())),
                   std::span<const double>(grads.bias[i].data(),
                                           static_cast<size_t>(grads.bias[i].size())),
                   1, nullptr});
  }
}

nlohmann::json doubles_to_json(std::span<const double> v) {
  return nlohmann::json(std::vector<double>(v.begin(), v.end()));
}

void doubles_from_json(const nlohmann::json &j, std::span<double> out, const char *what) {
  if (!j.is_array() || j.size() != out.size())
    throw Error(ErrorCode::Schema, std::string(what) + ": expected array of " +
                                       std::to_string(out.size()) + " numbers");
  for (size_t i = 0; i < out.size(); ++i) {
    if (!j[i].is_number())
      throw Error(ErrorCode::Schema, std::string(what) + ": non-numeric entry");
    out[i] = j[i].get<double>();
  }
}

nlohmann::json to_json(const Mlp &mlp) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto &l : mlp.layers) {
    layers.push_back({
        {"in", l.in_dim()},
        {"out", l.out_dim()},
        {"activation", activation_name(l.activation)},
        {"weight", doubles_to_json({l.weight.data(), static_cast<size_t>(l.weight.size())})},
        {"bias", doubles_to_json({l.bias.data(), static_cast<size_t>(l.bias.size())})},
    });
  }
  return {{"layers", layers}};
}

Mlp mlp_from_json(const nlohmann::json &j) {
  if (!j.is_object() || !j.contains("layers") || !j["layers"].is_array() || j["layers"].empty())
    throw Error(ErrorCode::Schema, "mlp: missing layers");
  Mlp mlp;
  size_t prev_out = 0;
  for (const auto &lj : j["layers"]) {
    if (!lj.contains("in") || !lj.contains("out") || !lj.contains("activation") ||
        !lj["in"].is_number_unsigned() || !lj["out"].is_number_unsigned())
      throw Error(ErrorCode::Schema, "mlp layer: missing shape");
    size_t in = lj["in"].get<size_t>(), out = lj["out"].get<size_t>();
    if (in == 0 || out == 0 || (prev_out != 0 && in != prev_out))
      throw Error(ErrorCode::Schema, "mlp layer: inconsistent dims");
    prev_out = out;
    DenseLayer l;
    std::string act = lj["activation"].is_string() ? lj["activation"].get<std::string>() : "";
    if (act != "tanh" && act != "identity")
      throw Error(ErrorCode::Schema, "mlp layer: bad activation");
    l.activation = act == "tanh" ? Activation::Tanh : Activation::Identity;
    l.weight = Tensor2(out, in);
    l.bias = Vector(static_cast<Eigen::Index>(out));
    doubles_from_json(lj.value("weight", nlohmann::json()),
                      {l.weight.data(), static_cast<size_t>(l.weight.size())}, "mlp weight");
    doubles_from_json(lj.value("bias", nlohmann::json()),
                      {l.bias.data(), static_cast<size_t>(l.bias.size())}, "mlp bias");
    mlp.layers.push_back(std::move(l));
  }
  return mlp;
}

nlohmann::json to_json(const AdamState &s) {
  nlohmann::json m = nlohmann::json::array(), v = nlohmann::json::array();
  for (const auto &b : s.m)
    m.push_back(doubles_to_json(b));
  for (const auto &b : s.v)
    v.push_back(doubles_to_json(b));
  return {{"lr", s.config.lr}, {"beta1", s.config.beta1}, {"beta2", s.config.beta2},
          {"eps", s.config.eps}, {"t", s.t}, {"m", m}, {"v", v}};
}

AdamState adam_from_json(const nlohmann::json &j) {
  AdamState s;
  try {
    s.config.lr = j.at("lr").get<double>();
    s.config.beta1 = j.at("beta1").get<double>();
    s.config.beta2 = j.at("beta2").get<double>();
    s.config.eps = j.at("eps").get<double>();
    s.t = j.at("t").get<int64_t>();
    for (const auto &b : j.at("m"))
      s.m.push_back(b.get<std::vector<double>>());
    for (const auto &b : j.at("v"))
      s.v.push_back(b.get<std::vector<double>>());
  } catch (const nlohmann::json::exception &e) {
    throw Error(ErrorCode::Schema, std::string("adam state: ") + e.what());
  }
  return s;
}

} // namespace nvec::nn
