#include "nvec/agent.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace nvec {

bool is_pow2(long long v) { return v >= 1 && (v & (v - 1)) == 0; }

ActionSpace::ActionSpace(int max_vf, int max_if) {
  if (!is_pow2(max_vf) || !is_pow2(max_if))
    throw Error(ErrorCode::InvalidArgument, "MAX_VF and MAX_IF must be powers of two");
  for (int v = 1; v <= max_vf; v *= 2)
    vfs_.push_back(v);
  for (int i = 1; i <= max_if; i *= 2)
    ifs_.push_back(i);
}

size_t ActionSpace::encode(size_t vf_idx, size_t if_idx) const {
  if (vf_idx >= vfs_.size() || if_idx >= ifs_.size())
    throw Error(ErrorCode::InvalidArgument, "action component out of range");
  return vf_idx * ifs_.size() + if_idx;
}

Action ActionSpace::decode(size_t index) const {
  if (index >= size())
    throw Error(ErrorCode::InvalidArgument, "action index out of range");
  return {index, vfs_[index / ifs_.size()], ifs_[index % ifs_.size()]};
}

std::optional<size_t> ActionSpace::index_of(int vf, int if_) const {
  auto v = std::find(vfs_.begin(), vfs_.end(), vf);
  auto i = std::find(ifs_.begin(), ifs_.end(), if_);
  if (v == vfs_.end() || i == ifs_.end())
    return std::nullopt;
  return encode(static_cast<size_t>(v - vfs_.begin()), static_cast<size_t>(i - ifs_.begin()));
}

nlohmann::json to_json(const ActionSpace &s) {
  return {{"max_vf", s.max_vf()}, {"max_if", s.max_if()}};
}

ActionSpace action_space_from_json(const nlohmann::json &j) {
  if (!j.is_object() || !j.contains("max_vf") || !j.contains("max_if") ||
      !j["max_vf"].is_number_integer() || !j["max_if"].is_number_integer())
    throw Error(ErrorCode::Schema, "action_space: expected {max_vf, max_if}");
  try {
    return ActionSpace(j["max_vf"].get<int>(), j["max_if"].get<int>());
  } catch (const Error &e) {
    throw Error(ErrorCode::Schema, std::string("action_space: ") + e.what());
  }
}

PolicyNet PolicyNet::create(size_t in_dim, size_t n_actions, Rng &rng,
                            const std::vector<size_t> &hidden) {
  std::vector<size_t> dims = {in_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  PolicyNet net;
  net.trunk = nn::Mlp::create(dims, nn::Activation::Tanh, nn::Activation::Tanh, rng);
  net.policy = nn::Mlp::create({dims.back(), n_actions}, nn::Activation::Tanh,
                               nn::Activation::Identity, rng, nn::Init::SmallXavier,
                               nn::Init::SmallXavier);
  net.value = nn::Mlp::create({dims.back(), 1}, nn::Activation::Tanh, nn::Activation::Identity,
                              rng);
  return net;
}

PolicyOutput policy_forward(const PolicyNet &net, const nn::Vector &state, PolicyCache *cache) {
  nn::Vector h = nn::forward(net.trunk, state, cache ? &cache->trunk : nullptr);
  PolicyOutput out;
  out.logits = nn::forward(net.policy, h, cache ? &cache->policy : nullptr);
  double mx = out.logits.maxCoeff();
  double lse = mx + std::log((out.logits.array() - mx).exp().sum());
  out.log_probs = out.logits.array() - lse;
  out.value = nn::forward(net.value, h, cache ? &cache->value : nullptr)[0];
  return out;
}

size_t greedy_index(const nn::Vector &logits) {
  size_t best = 0;
  for (Eigen::Index i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[static_cast<Eigen::Index>(best)])
      best = static_cast<size_t>(i);
  return best;
}

ActResult act(const PolicyNet &net, const nn::Vector &state, ActMode mode, Rng &rng) {
  PolicyOutput out = policy_forward(net, state);
  size_t a = 0;
  if (mode == ActMode::Greedy) {
    a = greedy_index(out.logits);
  } else {
    nn::Vector p = out.log_probs.array().exp();
    double u = rng.uniform() * p.sum();
    double acc = 0.0;
    a = static_cast<size_t>(p.size() - 1);
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      acc += p[i];
      if (u < acc) {
        a = static_cast<size_t>(i);
        break;
      }
    }
  }
  return {a, out.log_probs[static_cast<Eigen::Index>(a)], out.value};
}

nlohmann::json to_json(const PpoConfig &c) {
  return {{"lr", c.lr},
          {"embedding_lr", c.embedding_lr},
          {"clip_eps", c.clip_eps},
          {"epochs_per_batch", c.epochs_per_batch},
          {"batch_size", c.batch_size},
          {"minibatch_size", c.minibatch_size},
          {"entropy_coef", c.entropy_coef},
          {"value_coef", c.value_coef},
          {"seed", c.seed}};
}

PpoConfig ppo_config_from_json(const nlohmann::json &j) {
  PpoConfig c;
  if (!j.is_object())
    throw Error(ErrorCode::Schema, "ppo config: expected object");
  try {
    c.lr = j.value("lr", c.lr);
    c.embedding_lr = j.value("embedding_lr", c.embedding_lr);
    c.clip_eps = j.value("clip_eps", c.clip_eps);
    c.epochs_per_batch = j.value("epochs_per_batch", c.epochs_per_batch);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.minibatch_size = j.value("minibatch_size", c.minibatch_size);
    c.entropy_coef = j.value("entropy_coef", c.entropy_coef);
    c.value_coef = j.value("value_coef", c.value_coef);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception &e) {
    throw Error(ErrorCode::Schema, std::string("ppo config: ") + e.what());
  }
  if (!(c.clip_eps > 0.0 && c.clip_eps < 1.0) || c.batch_size < 1 || c.minibatch_size < 1 ||
      c.epochs_per_batch < 0 || !(c.lr > 0.0) || !(c.embedding_lr > 0.0))
    throw Error(ErrorCode::Schema, "ppo config: value out of range");
  return c;
}

namespace {

struct SampleEval {
  nn::Vector state;
  EmbedCache embed_cache;
  PolicyCache cache;
  PolicyOutput out;
};

void evaluate_sample(const PolicyNet &net, const EmbeddingNet *emb, const Transition &t,
                     SampleEval &ev) {
  if (emb && t.bag)
    ev.state = embed(*t.bag, *emb, &ev.embed_cache);
  else
    ev.state = t.state;
  ev.out = policy_forward(net, ev.state, &ev.cache);
}

} // namespace

PolicyGrads PolicyGrads::zeros_like(const PolicyNet &net) {
  return {nn::MlpGrads::zeros_like(net.trunk), nn::MlpGrads::zeros_like(net.policy),
          nn::MlpGrads::zeros_like(net.value)};
}

void PolicyGrads::set_zero() {
  trunk.set_zero();
  policy.set_zero();
  value.set_zero();
}

double ppo_loss_grads(const PolicyNet &net, const EmbeddingNet *embedding,
                      const std::vector<std::pair<const Transition *, double>> &items,
                      const PpoConfig &cfg, PolicyGrads &grads, EmbeddingGrads *emb_grads,
                      MinibatchTally *tally) {
  if (items.empty())
    throw Error(ErrorCode::EmptyBatch, "ppo: empty minibatch");
  const double eps = cfg.clip_eps;
  const double scale = 1.0 / static_cast<double>(items.size());
  double loss = 0.0;
  SampleEval ev;
  for (const auto &[t, a_hat] : items) {
    evaluate_sample(net, embedding, *t, ev);
    const auto ai = static_cast<Eigen::Index>(t->action);
    nn::Vector p = ev.out.log_probs.array().exp();
    double r = std::exp(ev.out.log_probs[ai] - t->logp_old);
    double clipped_r = std::clamp(r, 1.0 - eps, 1.0 + eps);
    double surr = std::min(r * a_hat, clipped_r * a_hat);
    // The unclipped branch carries the gradient unless the clipped one is
    // strictly smaller.
    bool grad_flows = r * a_hat <= clipped_r * a_hat;
    double entropy = -(p.array() * ev.out.log_probs.array()).sum();
    double dv = ev.out.value - t->reward;
    loss += scale * (-surr + cfg.value_coef * dv * dv - cfg.entropy_coef * entropy);
    if (tally) {
      tally->policy_loss += -surr;
      tally->value_loss += dv * dv;
      tally->entropy += entropy;
      tally->clipped += (r < 1.0 - eps || r > 1.0 + eps) ? 1 : 0;
      ++tally->count;
    }

    nn::Vector dlogits = nn::Vector::Zero(p.size());
    if (grad_flows) {
      double dlogp = -a_hat * r;
      dlogits = -dlogp * p;
      dlogits[ai] += dlogp;
    }
    // dH/dz_j = -p_j (log p_j + H); the loss carries -entropy_coef * H.
    dlogits.array() += cfg.entropy_coef * p.array() * (ev.out.log_probs.array() + entropy);
    dlogits *= scale;
    nn::Vector dvalue(1);
    dvalue[0] = scale * 2.0 * cfg.value_coef * dv;

    nn::Vector dh = nn::backward(net.policy, ev.cache.policy, dlogits, grads.policy);
    dh += nn::backward(net.value, ev.cache.value, dvalue, grads.value);
    nn::Vector dx = nn::backward(net.trunk, ev.cache.trunk, dh, grads.trunk);
    if (emb_grads && embedding && t->bag)
      embed_backward(*embedding, ev.embed_cache, dx, *emb_grads);
  }
  return loss;
}

PpoStats ppo_update(PolicyNet &net, EmbeddingNet *embedding, const std::vector<Transition> &batch,
                    const PpoConfig &cfg, PpoOptimizer &opt) {
  if (batch.empty())
    throw Error(ErrorCode::EmptyBatch, "ppo_update: empty batch");
  const size_t n = batch.size();
  const double eps = cfg.clip_eps;

  std::vector<double> adv(n);
  for (size_t i = 0; i < n; ++i)
    adv[i] = batch[i].reward - batch[i].value_old;
  if (n >= 2) {
    double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / static_cast<double>(n);
    double var = 0.0;
    for (double a : adv)
      var += (a - mean) * (a - mean);
    double sd = std::sqrt(var / static_cast<double>(n));
    for (double &a : adv)
      a = sd > 1e-12 ? (a - mean) / sd : 0.0;
  }

  PpoStats stats;
  // Diagnostic pass with the pre-update parameters.
  SampleEval ev;
  size_t clipped0 = 0;
  for (size_t i = 0; i < n; ++i) {
    evaluate_sample(net, embedding, batch[i], ev);
    double r = std::exp(ev.out.log_probs[static_cast<Eigen::Index>(batch[i].action)] -
                        batch[i].logp_old);
    stats.initial_ratio_dev = std::max(stats.initial_ratio_dev, std::abs(r - 1.0));
    if (r < 1.0 - eps || r > 1.0 + eps)
      ++clipped0;
  }
  stats.initial_clip_frac = static_cast<double>(clipped0) / static_cast<double>(n);

  PolicyGrads grads = PolicyGrads::zeros_like(net);
  std::optional<EmbeddingGrads> g_emb;
  if (embedding)
    g_emb = EmbeddingGrads::zeros_like(*embedding);
  opt.policy.config.lr = cfg.lr;
  opt.embedding.config.lr = cfg.embedding_lr;

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng(mix_seed(cfg.seed, 0x9f0 + opt.updates));
  const size_t mb = std::min(cfg.minibatch_size, n);
  MinibatchTally tally;
  std::vector<std::pair<const Transition *, double>> items;

  for (int epoch = 0; epoch < cfg.epochs_per_batch; ++epoch) {
    for (size_t i = n; i > 1; --i)
      std::swap(order[i - 1], order[static_cast<size_t>(rng.below(i))]);
    for (size_t begin = 0; begin < n; begin += mb) {
      size_t end = std::min(begin + mb, n);
      items.clear();
      for (size_t k = begin; k < end; ++k)
        items.emplace_back(&batch[order[k]], adv[order[k]]);
      grads.set_zero();
      if (g_emb)
        g_emb->clear();
      ppo_loss_grads(net, embedding, items, cfg, grads, g_emb ? &*g_emb : nullptr, &tally);
      std::vector<nn::ParamSlot> slots;
      nn::append_slots(net.trunk, grads.trunk, slots);
      nn::append_slots(net.policy, grads.policy, slots);
      nn::append_slots(net.value, grads.value, slots);
      nn::adam_step(slots, opt.policy);
      if (g_emb) {
        g_emb->finalize_rows();
        std::vector<nn::ParamSlot> eslots;
        append_slots(*embedding, *g_emb, eslots);
        nn::adam_step(eslots, opt.embedding);
      }
      ++stats.steps;
    }
  }
  ++opt.updates;
  if (tally.count > 0) {
    auto d = static_cast<double>(tally.count);
    stats.policy_loss = tally.policy_loss / d;
    stats.value_loss = tally.value_loss / d;
    stats.entropy = tally.entropy / d;
    stats.clip_frac = static_cast<double>(tally.clipped) / d;
  }
  return stats;
}

nlohmann::json to_json(const PolicyNet &net) {
  return {{"in_dim", net.in_dim()},
          {"n_actions", net.n_actions()},
          {"trunk", nn::to_json(net.trunk)},
          {"policy", nn::to_json(net.policy)},
          {"value", nn::to_json(net.value)}};
}

PolicyNet policy_from_json(const nlohmann::json &j) {
  if (!j.is_object() || !j.contains("in_dim") || !j.contains("n_actions") ||
      !j["in_dim"].is_number_unsigned() || !j["n_actions"].is_number_unsigned())
    throw Error(ErrorCode::Schema, "policy: missing dims");
  PolicyNet net;
  net.trunk = nn::mlp_from_json(j.value("trunk", nlohmann::json()));
  net.policy = nn::mlp_from_json(j.value("policy", nlohmann::json()));
  net.value = nn::mlp_from_json(j.value("value", nlohmann::json()));
  if (net.in_dim() != j["in_dim"].get<size_t>() ||
      net.n_actions() != j["n_actions"].get<size_t>() ||
      net.policy.in_dim() != net.trunk.out_dim() || net.value.in_dim() != net.trunk.out_dim() ||
      net.value.out_dim() != 1)
    throw Error(ErrorCode::Schema, "policy: inconsistent dims");
  return net;
}

PolicyNet policy_from_text(std::string_view text) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded())
    throw Error(ErrorCode::Schema, "policy: malformed JSON");
  return policy_from_json(j);
}

} // namespace nvec
