#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cenlab/dataset.hpp"
#include "cenlab/nn.hpp"
#include "cenlab/oracle.hpp"
#include "cenlab/render.hpp"

namespace cenlab {

struct CenConfig {
  int obs_size = kObsSize;
  int channels = 64;
  int hidden = 32;
  int latent = 128;
  int action_embed = 8;
  float alpha = 0.01f;
  float threshold = 0.01f;
  float lr = 1e-4f;
  int batch = 64;
  int steps = 3000;

  void validate() const {
    if (alpha < 0) throw std::invalid_argument("cen: alpha must be >= 0");
    if (threshold <= 0) throw std::invalid_argument("cen: threshold must be > 0");
    if (obs_size < 8 || (obs_size & (obs_size - 1)) != 0)
      throw std::invalid_argument("cen: obs_size must be a power of two >= 8");
    if (channels < 1 || hidden < 1 || latent < 1 || action_embed < 1 || batch < 1 ||
        steps < 1 || lr <= 0)
      throw std::invalid_argument("cen: sizes, steps, and lr must be positive");
  }

  // transposed-conv stack doubles 1x1 up to obs_size
  int decoder_depth() const {
    int d = 0;
    for (int s = 1; s < obs_size; s *= 2) ++d;
    return d;
  }
};

// Conv observation encoder: two stride-2 convs, two residual blocks, then a
// linear head. Output width is `hidden`. Also reused by the inverse-model
// baseline, which mirrors this shape.
template <typename T>
struct CenEncoderT {
  using Graph = nn::GraphT<T>;
  using Var = typename Graph::Var;

  int channels = 0, obs_size = 0, hidden = 0;
  nn::ConvHandle<T> conv1, conv2;
  nn::BnHandle<T> bn1, bn2;
  struct Res {
    nn::ConvHandle<T> conv3, conv1;
    nn::BnHandle<T> bn3, bn1;
  } res[2];
  nn::LinHandle<T> fc;

  CenEncoderT() = default;
  CenEncoderT(nn::ParamStoreT<T>& store, const std::string& prefix, int channels_,
              int obs, int hidden_, CounterRng& rng)
      : channels(channels_), obs_size(obs), hidden(hidden_) {
    conv1 = store.conv(prefix + ".conv1", channels, 1, 4, rng);
    bn1 = store.bn(prefix + ".bn1", channels);
    conv2 = store.conv(prefix + ".conv2", channels, channels, 4, rng);
    bn2 = store.bn(prefix + ".bn2", channels);
    for (int r = 0; r < 2; ++r) {
      std::string base = prefix + ".res" + std::to_string(r + 1);
      res[r].conv3 = store.conv(base + ".conv3", channels, channels, 3, rng);
      res[r].bn3 = store.bn(base + ".bn3", channels);
      res[r].conv1 = store.conv(base + ".conv1", channels, channels, 1, rng);
      res[r].bn1 = store.bn(base + ".bn1", channels);
    }
    fc = store.lin(prefix + ".fc", hidden, channels * (obs / 4) * (obs / 4), rng);
  }

  // x: [B,1,obs,obs] -> z: [B,hidden]
  Var apply(Graph& g, Var x, bool train) const {
    Var h = g.relu(nn::apply_bn(
        g, g.conv2d(x, g.param(*conv1.w), g.param(*conv1.b), 2, 1), bn1, train));
    h = g.relu(nn::apply_bn(
        g, g.conv2d(h, g.param(*conv2.w), g.param(*conv2.b), 2, 1), bn2, train));
    for (int r = 0; r < 2; ++r) {
      Var t = g.relu(nn::apply_bn(
          g, g.conv2d(h, g.param(*res[r].conv3.w), g.param(*res[r].conv3.b), 1, 1),
          res[r].bn3, train));
      t = nn::apply_bn(
          g, g.conv2d(t, g.param(*res[r].conv1.w), g.param(*res[r].conv1.b), 1, 0),
          res[r].bn1, train);
      h = g.relu(g.add(h, t));
    }
    int b = g.val(x).shape[0];
    int flat = channels * (obs_size / 4) * (obs_size / 4);
    return g.relu(nn::apply_lin(g, g.reshape(h, {b, flat}), fc));
  }
};

// Two-branch effect model: shared conv encoder, action-conditioned controlled
// branch, action-blind normal branch, and one decoder parameter set that both
// branches go through.
template <typename T>
class CenModelT {
 public:
  using Graph = nn::GraphT<T>;
  using Var = typename Graph::Var;

  CenModelT(CenConfig cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    CounterRng rng(derive_seed(seed, 21));
    enc_ = CenEncoderT<T>(store_, "enc", cfg_.channels, cfg_.obs_size, cfg_.hidden,
                          rng);
    embed_ = store_.add("embed.w", {kNumActions, cfg_.action_embed},
                        static_cast<size_t>(cfg_.action_embed), &rng);
    int h = cfg_.hidden;
    c1_ = store_.lin("ctrl.fc1", h, h + cfg_.action_embed, rng);
    c2_ = store_.lin("ctrl.fc2", h, h, rng);
    c3_ = store_.lin("ctrl.fc3", h, h, rng);
    cout_ = store_.lin("ctrl.out", cfg_.latent, h, rng);
    n1_ = store_.lin("norm.fc1", h, h, rng);
    n2_ = store_.lin("norm.fc2", h, h, rng);
    n3_ = store_.lin("norm.fc3", h, h, rng);
    nout_ = store_.lin("norm.out", cfg_.latent, h, rng);
    int depth = cfg_.decoder_depth();
    for (int i = 0; i < depth; ++i) {
      int in = i == 0 ? cfg_.latent : cfg_.channels;
      int out = i == depth - 1 ? 1 : cfg_.channels;
      dec_.push_back(store_.tconv("dec.t" + std::to_string(i + 1), in, out, 4, rng));
    }
  }

  const CenConfig& config() const { return cfg_; }

  // x: [B,1,obs,obs] -> z: [B,hidden]
  Var encode(Graph& g, Var x, bool train) { return enc_.apply(g, x, train); }

  // z: [B,hidden] + actions -> code: [B,latent]
  Var controlled_code(Graph& g, Var z, const std::vector<int>& actions) {
    Var e = g.rows(g.param(*embed_), actions);
    Var h = g.concat(z, e);
    h = g.relu(nn::apply_lin(g, h, c1_));
    h = g.relu(nn::apply_lin(g, h, c2_));
    h = g.relu(nn::apply_lin(g, h, c3_));
    return nn::apply_lin(g, h, cout_);
  }

  Var normal_code(Graph& g, Var z) {
    Var h = g.relu(nn::apply_lin(g, z, n1_));
    h = g.relu(nn::apply_lin(g, h, n2_));
    h = g.relu(nn::apply_lin(g, h, n3_));
    return nn::apply_lin(g, h, nout_);
  }

  // code: [B,latent] -> effect map [B,1,obs,obs] in (-1,1)
  Var decode(Graph& g, Var code) {
    int b = g.val(code).shape[0];
    Var h = g.reshape(code, {b, cfg_.latent, 1, 1});
    for (size_t i = 0; i < dec_.size(); ++i) {
      h = g.conv2d_transposed(h, g.param(*dec_[i].w), g.param(*dec_[i].b), 2, 1);
      h = i + 1 < dec_.size() ? g.relu(h) : g.tanh_(h);
    }
    return h;
  }

  struct ForwardVars {
    Var z, code_c, code_n, ec, en;
  };

  ForwardVars forward(Graph& g, Var x, const std::vector<int>& actions, bool train) {
    ForwardVars f;
    f.z = encode(g, x, train);
    f.code_c = controlled_code(g, f.z, actions);
    f.code_n = normal_code(g, f.z);
    f.ec = decode(g, f.code_c);
    f.en = decode(g, f.code_n);
    return f;
  }

  std::vector<nn::ParamTensorT<T>*> parameters() { return store_.parameters(); }
  nn::ParamTensorT<T>& parameter(const std::string& name) {
    return store_.parameter(name);
  }
  std::vector<std::pair<std::string, nn::TensorT<T>*>> named_tensors() {
    return store_.named_tensors();
  }

 private:
  CenConfig cfg_;
  nn::ParamStoreT<T> store_;
  CenEncoderT<T> enc_;
  nn::ParamTensorT<T>* embed_ = nullptr;
  nn::LinHandle<T> c1_, c2_, c3_, cout_, n1_, n2_, n3_, nout_;
  std::vector<nn::ConvHandle<T>> dec_;
};

using CenModel = CenModelT<float>;

// loss = MSE(ec + en, ep) + alpha * MSE(en, ep)
template <typename T>
struct CenLossVars {
  typename nn::GraphT<T>::Var total, term1, term2;
};

template <typename T>
CenLossVars<T> cen_loss(nn::GraphT<T>& g, typename nn::GraphT<T>::Var ec,
                        typename nn::GraphT<T>::Var en,
                        typename nn::GraphT<T>::Var ep, T alpha) {
  CenLossVars<T> l;
  l.term1 = g.mse(g.add(ec, en), ep);
  l.term2 = g.mse(en, ep);
  l.total = g.add(l.term1, g.scale(l.term2, alpha));
  return l;
}

// --- training -----------------------------------------------------------------

struct TrainLogRow {
  int step = 0;
  float loss = 0, term1 = 0, term2 = 0;
};

struct TrainHooks {
  int log_every = 25;
  std::function<void(const TrainLogRow&)> on_log;
  int checkpoint_every = 0;  // 0: no periodic checkpoints
  std::function<void(int)> on_checkpoint;
};

namespace detail {

// Epoch-shuffled batch index stream; partial trailing batches are dropped.
// A single-sample dataset is duplicated so batch norm keeps a batch dim of
// at least 2 (zero within-batch variance normalizes to zero, well-defined).
class BatchStream {
 public:
  BatchStream(size_t n, int batch, uint64_t seed)
      : n_(n), batch_(std::min(static_cast<size_t>(batch), std::max<size_t>(n, 2))),
        rng_(derive_seed(seed, 11)) {
    if (n_ == 0) throw std::invalid_argument("train: empty dataset");
    order_.resize(n_);
    for (size_t i = 0; i < n_; ++i) order_[i] = i;
    pos_ = n_;  // force shuffle on first use
  }

  std::vector<size_t> next() {
    if (n_ == 1) return {0, 0};
    if (pos_ + batch_ > n_) {
      for (size_t i = n_; i > 1; --i)
        std::swap(order_[i - 1], order_[rng_.below(static_cast<uint32_t>(i))]);
      pos_ = 0;
    }
    std::vector<size_t> out(order_.begin() + pos_, order_.begin() + pos_ + batch_);
    pos_ += batch_;
    return out;
  }

  size_t batch() const { return batch_; }

 private:
  size_t n_, batch_, pos_;
  std::vector<size_t> order_;
  CounterRng rng_;
};

inline void fill_obs(const std::vector<uint8_t>& packed, float* dst, size_t n) {
  for (size_t j = 0; j < n; ++j) dst[j] = static_cast<float>(packed[j]) / 128.0f;
}

// x: packed pre-step observations, ep: exact perceived effect (next - obs)
inline void fill_batch(const Dataset& ds, const std::vector<size_t>& idx, int obs,
                       nn::Tensor& x, nn::Tensor& ep, std::vector<int>& acts) {
  size_t plane = static_cast<size_t>(obs) * obs;
  for (size_t i = 0; i < idx.size(); ++i) {
    const Sample& s = ds.samples[idx[i]];
    fill_obs(s.obs, x.v.data() + i * plane, plane);
    for (size_t j = 0; j < plane; ++j)
      ep.v[i * plane + j] = static_cast<float>(static_cast<int>(s.next_obs[j]) -
                                               static_cast<int>(s.obs[j])) /
                            128.0f;
    acts[i] = static_cast<int>(s.action);
  }
}

// frame pair for action-prediction baselines
inline void fill_batch_pair(const Dataset& ds, const std::vector<size_t>& idx,
                            int obs, nn::Tensor& x0, nn::Tensor& x1,
                            std::vector<int>& acts) {
  size_t plane = static_cast<size_t>(obs) * obs;
  for (size_t i = 0; i < idx.size(); ++i) {
    const Sample& s = ds.samples[idx[i]];
    fill_obs(s.obs, x0.v.data() + i * plane, plane);
    fill_obs(s.next_obs, x1.v.data() + i * plane, plane);
    acts[i] = static_cast<int>(s.action);
  }
}

}  // namespace detail

inline std::vector<TrainLogRow> train_cen(CenModel& model, const Dataset& ds,
                                          uint64_t seed, TrainHooks hooks = {}) {
  const CenConfig& cfg = model.config();
  if (ds.obs_h != cfg.obs_size || ds.obs_w != cfg.obs_size)
    throw std::invalid_argument("train: dataset observation size mismatch");
  detail::BatchStream stream(ds.samples.size(), cfg.batch, seed);
  int b = static_cast<int>(stream.batch());
  nn::Adam opt(cfg.lr);
  std::vector<nn::ParamTensor*> params = model.parameters();
  std::vector<TrainLogRow> log;
  nn::Tensor x({b, 1, cfg.obs_size, cfg.obs_size});
  nn::Tensor ep({b, 1, cfg.obs_size, cfg.obs_size});
  std::vector<int> acts(b);

  for (int step = 1; step <= cfg.steps; ++step) {
    detail::fill_batch(ds, stream.next(), cfg.obs_size, x, ep, acts);
    for (auto* p : params) p->zero_grad();
    nn::Graph g;
    auto f = model.forward(g, g.input(x), acts, true);
    CenLossVars<float> l = cen_loss<float>(g, f.ec, f.en, g.input(ep), cfg.alpha);
    TrainLogRow row{step, g.scalar(l.total), g.scalar(l.term1), g.scalar(l.term2)};
    try {
      g.backward(l.total);
      opt.step(params);
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("cen train step " + std::to_string(step) + ": " +
                               e.what());
    }
    if (hooks.log_every > 0 &&
        (step == 1 || step == cfg.steps || step % hooks.log_every == 0)) {
      log.push_back(row);
      if (hooks.on_log) hooks.on_log(row);
    }
    if (hooks.checkpoint_every > 0 && hooks.on_checkpoint &&
        (step % hooks.checkpoint_every == 0 || step == cfg.steps))
      hooks.on_checkpoint(step);
  }
  return log;
}

// --- frozen-model inference ----------------------------------------------------

inline nn::Tensor obs_to_tensor(const Image& obs) {
  nn::Tensor x({1, 1, obs.height, obs.width});
  std::copy(obs.px.begin(), obs.px.end(), x.v.begin());
  return x;
}

// eval-mode controlled effect map for one observation/action pair
inline Image cen_controlled_map(CenModel& model, const Image& obs, AgentAction a) {
  nn::Graph g;
  auto z = model.encode(g, g.input(obs_to_tensor(obs)), false);
  auto ec = model.decode(g, model.controlled_code(g, z, {static_cast<int>(a)}));
  const nn::Tensor& t = g.val(ec);
  Image out(obs.width, obs.height);
  std::copy(t.v.begin(), t.v.end(), out.px.begin());
  return out;
}

inline Image cen_normal_map(CenModel& model, const Image& obs) {
  nn::Graph g;
  auto z = model.encode(g, g.input(obs_to_tensor(obs)), false);
  auto en = model.decode(g, model.normal_code(g, z));
  const nn::Tensor& t = g.val(en);
  Image out(obs.width, obs.height);
  std::copy(t.v.begin(), t.v.end(), out.px.begin());
  return out;
}

inline Mask cen_predict_mask(CenModel& model, const Image& obs, AgentAction a,
                             float threshold) {
  Image ec = cen_controlled_map(model, obs, a);
  Mask m(ec.width, ec.height);
  for (size_t i = 0; i < ec.px.size(); ++i)
    m.m[i] = std::abs(ec.px[i]) > threshold ? 1 : 0;
  return m;
}

inline Mask cen_predict_mask(CenModel& model, const Image& obs, AgentAction a) {
  return cen_predict_mask(model, obs, a, model.config().threshold);
}

// controlled-branch code, the latent used for probing
inline std::vector<float> cen_controlled_latent(CenModel& model, const Image& obs,
                                                AgentAction a) {
  nn::Graph g;
  auto z = model.encode(g, g.input(obs_to_tensor(obs)), false);
  auto code = model.controlled_code(g, z, {static_cast<int>(a)});
  return g.val(code).v;
}

template <typename Model>
void save_model(const std::string& path, Model& model) {
  nn::NamedTensorList items;
  for (auto& [name, t] : model.named_tensors()) items.emplace_back(name, t);
  nn::save_checkpoint(path, items);
}

template <typename Model>
void load_model(const std::string& path, Model& model) {
  nn::NamedTensorList items;
  for (auto& [name, t] : model.named_tensors()) items.emplace_back(name, t);
  nn::load_checkpoint(path, items);
}

}  // namespace cenlab
