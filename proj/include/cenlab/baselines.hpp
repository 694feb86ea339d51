#pragma once

#include <string>
#include <vector>

#include "cenlab/cen.hpp"

namespace cenlab {

// --- ADM-style attention baseline -----------------------------------------------
// Action prediction from a frame pair with per-cell attention. This is a
// simplified reimplementation: siamese conv encoder per frame, channel concat,
// 1x1 fuse, attention softmax over the cell grid with an entropy reward, and
// attention-pooled features into a linear action classifier.

struct AdmConfig {
  int obs_size = kObsSize;
  float entropy_weight = 0.05f;
  int hidden = 64;
  int attention_size = 128;
  float threshold = 0.01f;
  float lr = 1e-4f;
  int batch = 64;
  int steps = 3000;

  void validate() const {
    if (entropy_weight < 0)
      throw std::invalid_argument("adm: entropy weight must be >= 0");
    if (threshold <= 0) throw std::invalid_argument("adm: threshold must be > 0");
    if (obs_size < 8 || obs_size % 8 != 0)
      throw std::invalid_argument("adm: obs_size must be a multiple of 8, >= 8");
    if (hidden < 1 || attention_size < 1 || batch < 1 || steps < 1 || lr <= 0)
      throw std::invalid_argument("adm: sizes, steps, and lr must be positive");
  }

  int grid() const { return obs_size / 8; }  // three stride-2 convs
};

class AdmModel {
 public:
  using Graph = nn::Graph;
  using Var = Graph::Var;

  AdmModel(AdmConfig cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    CounterRng rng(derive_seed(seed, 22));
    f1_ = store_.conv("frame.conv1", 32, 1, 4, rng);
    f2_ = store_.conv("frame.conv2", 32, 32, 4, rng);
    f3_ = store_.conv("frame.conv3", 64, 32, 4, rng);
    fuse_ = store_.conv("fuse.conv", cfg_.hidden, 128, 1, rng);
    attn_ = store_.conv("attn.conv", 1, cfg_.hidden, 1, rng);
    feat_ = store_.conv("feat.conv", cfg_.attention_size, cfg_.hidden, 1, rng);
    cls_ = store_.lin("cls", kNumActions, cfg_.attention_size, rng);
  }

  const AdmConfig& config() const { return cfg_; }

  struct Fwd {
    Var logits;      // [B, |A|]
    Var attn_rows;   // [B, G*G] softmax rows
  };

  Fwd forward(Graph& g, Var x0, Var x1) {
    Var h0 = encode_frame(g, x0);
    Var h1 = encode_frame(g, x1);
    Var h = g.relu(g.conv2d(g.concat(h0, h1), g.param(*fuse_.w), g.param(*fuse_.b),
                            1, 0));
    int b = g.val(x0).shape[0];
    int gg = cfg_.grid() * cfg_.grid();
    Var logits_cells =
        g.reshape(g.conv2d(h, g.param(*attn_.w), g.param(*attn_.b), 1, 0), {b, gg});
    Fwd f;
    f.attn_rows = g.softmax(logits_cells);
    Var feat = g.relu(g.conv2d(h, g.param(*feat_.w), g.param(*feat_.b), 1, 0));
    Var pooled = g.attend(
        feat, g.reshape(f.attn_rows, {b, 1, cfg_.grid(), cfg_.grid()}));
    f.logits = nn::apply_lin(g, pooled, cls_);
    return f;
  }

  Var action_logits(Graph& g, Var x0, Var x1, bool) { return forward(g, x0, x1).logits; }

  std::vector<nn::ParamTensor*> parameters() { return store_.parameters(); }
  nn::ParamTensor& parameter(const std::string& name) {
    return store_.parameter(name);
  }
  std::vector<std::pair<std::string, nn::Tensor*>> named_tensors() {
    return store_.named_tensors();
  }
  nn::ParamStoreT<float>& store() { return store_; }

 private:
  AdmConfig cfg_;
  nn::ParamStoreT<float> store_;
  nn::ConvHandle<float> f1_, f2_, f3_, fuse_, attn_, feat_;
  nn::LinHandle<float> cls_;

  Var encode_frame(Graph& g, Var x) {
    Var h = g.relu(g.conv2d(x, g.param(*f1_.w), g.param(*f1_.b), 2, 1));
    h = g.relu(g.conv2d(h, g.param(*f2_.w), g.param(*f2_.b), 2, 1));
    return g.relu(g.conv2d(h, g.param(*f3_.w), g.param(*f3_.b), 2, 1));
  }
};

// --- inverse-dynamics baseline ---------------------------------------------------
// Shared CEN-shaped encoder on each frame; the concatenated pair of encodings
// is the probe latent; a linear classifier over actions sits on top.

struct InverseConfig {
  int obs_size = kObsSize;
  int channels = 64;
  int hidden = 32;
  float lr = 1e-4f;
  int batch = 64;
  int steps = 1500;

  void validate() const {
    if (obs_size < 8 || (obs_size & (obs_size - 1)) != 0)
      throw std::invalid_argument("inverse: obs_size must be a power of two >= 8");
    if (channels < 1 || hidden < 1 || batch < 1 || steps < 1 || lr <= 0)
      throw std::invalid_argument("inverse: sizes, steps, and lr must be positive");
  }
};

class InverseModel {
 public:
  using Graph = nn::Graph;
  using Var = Graph::Var;

  InverseModel(InverseConfig cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    CounterRng rng(derive_seed(seed, 23));
    enc_ = CenEncoderT<float>(store_, "enc", cfg_.channels, cfg_.obs_size,
                              cfg_.hidden, rng);
    cls_ = store_.lin("cls", kNumActions, 2 * cfg_.hidden, rng);
  }

  const InverseConfig& config() const { return cfg_; }

  // the probe latent: encodings of both frames, concatenated
  Var latent(Graph& g, Var x0, Var x1, bool train) {
    return g.concat(enc_.apply(g, x0, train), enc_.apply(g, x1, train));
  }

  Var action_logits(Graph& g, Var x0, Var x1, bool train) {
    return nn::apply_lin(g, latent(g, x0, x1, train), cls_);
  }

  std::vector<nn::ParamTensor*> parameters() { return store_.parameters(); }
  nn::ParamTensor& parameter(const std::string& name) {
    return store_.parameter(name);
  }
  std::vector<std::pair<std::string, nn::Tensor*>> named_tensors() {
    return store_.named_tensors();
  }
  nn::ParamStoreT<float>& store() { return store_; }

 private:
  InverseConfig cfg_;
  nn::ParamStoreT<float> store_;
  CenEncoderT<float> enc_;
  nn::LinHandle<float> cls_;
};

// --- training ---------------------------------------------------------------------

namespace detail {

// Shared loop for the frame-pair classifiers. `make_loss` builds the loss from
// (graph, x0, x1, actions) and fills the log row's term fields.
template <typename LossFn>
std::vector<TrainLogRow> train_pairs(nn::ParamStoreT<float>& store, const Dataset& ds,
                                     int obs, int batch, int steps, float lr,
                                     uint64_t seed, TrainHooks hooks,
                                     LossFn make_loss) {
  BatchStream stream(ds.samples.size(), batch, seed);
  int b = static_cast<int>(stream.batch());
  nn::Adam opt(lr);
  std::vector<nn::ParamTensor*> params = store.parameters();
  std::vector<TrainLogRow> log;
  nn::Tensor x0({b, 1, obs, obs});
  nn::Tensor x1({b, 1, obs, obs});
  std::vector<int> acts(b);

  for (int step = 1; step <= steps; ++step) {
    fill_batch_pair(ds, stream.next(), obs, x0, x1, acts);
    store.zero_grads();
    nn::Graph g;
    TrainLogRow row;
    row.step = step;
    typename nn::Graph::Var loss = make_loss(g, g.input(x0), g.input(x1), acts, row);
    row.loss = g.scalar(loss);
    try {
      g.backward(loss);
      opt.step(params);
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("baseline train step " + std::to_string(step) + ": " +
                               e.what());
    }
    if (hooks.log_every > 0 &&
        (step == 1 || step == steps || step % hooks.log_every == 0)) {
      log.push_back(row);
      if (hooks.on_log) hooks.on_log(row);
    }
    if (hooks.checkpoint_every > 0 && hooks.on_checkpoint &&
        (step % hooks.checkpoint_every == 0 || step == steps))
      hooks.on_checkpoint(step);
  }
  return log;
}

}  // namespace detail

// loss = CE(logits, actions) - entropy_weight * H(attention)
inline std::vector<TrainLogRow> train_adm(AdmModel& model, const Dataset& ds,
                                          uint64_t seed, TrainHooks hooks = {}) {
  const AdmConfig& cfg = model.config();
  if (ds.obs_h != cfg.obs_size || ds.obs_w != cfg.obs_size)
    throw std::invalid_argument("train: dataset observation size mismatch");
  return detail::train_pairs(
      model.store(), ds, cfg.obs_size, cfg.batch, cfg.steps, cfg.lr, seed,
      hooks,
      [&](nn::Graph& g, nn::Graph::Var x0, nn::Graph::Var x1,
          const std::vector<int>& acts, TrainLogRow& row) {
        auto f = model.forward(g, x0, x1);
        auto ce = g.cross_entropy(f.logits, acts);
        auto ent = g.entropy(f.attn_rows);
        row.term1 = g.scalar(ce);
        row.term2 = g.scalar(ent);
        return g.add(ce, g.scale(ent, -cfg.entropy_weight));
      });
}

inline std::vector<TrainLogRow> train_inverse(InverseModel& model, const Dataset& ds,
                                              uint64_t seed, TrainHooks hooks = {}) {
  const InverseConfig& cfg = model.config();
  if (ds.obs_h != cfg.obs_size || ds.obs_w != cfg.obs_size)
    throw std::invalid_argument("train: dataset observation size mismatch");
  return detail::train_pairs(
      model.store(), ds, cfg.obs_size, cfg.batch, cfg.steps, cfg.lr, seed,
      hooks,
      [&](nn::Graph& g, nn::Graph::Var x0, nn::Graph::Var x1,
          const std::vector<int>& acts, TrainLogRow& row) {
        auto ce = g.cross_entropy(model.action_logits(g, x0, x1, true), acts);
        row.term1 = g.scalar(ce);
        row.term2 = 0.0f;
        return ce;
      });
}

// fraction of transitions whose argmax logit matches the taken action
template <typename Model>
float classifier_accuracy(Model& model, const Dataset& ds, size_t max_n = 0) {
  size_t n = ds.samples.size();
  if (max_n > 0) n = std::min(n, max_n);
  if (n == 0) throw std::invalid_argument("accuracy: empty dataset");
  int obs = ds.obs_h;
  size_t plane = static_cast<size_t>(obs) * obs;
  size_t correct = 0;
  size_t pos = 0;
  while (pos < n) {
    size_t b = std::min<size_t>(64, n - pos);
    nn::Tensor x0({static_cast<int>(b), 1, obs, obs});
    nn::Tensor x1({static_cast<int>(b), 1, obs, obs});
    std::vector<int> acts(b);
    for (size_t i = 0; i < b; ++i) {
      const Sample& s = ds.samples[pos + i];
      detail::fill_obs(s.obs, x0.v.data() + i * plane, plane);
      detail::fill_obs(s.next_obs, x1.v.data() + i * plane, plane);
      acts[i] = static_cast<int>(s.action);
    }
    nn::Graph g;
    auto logits = model.action_logits(g, g.input(std::move(x0)),
                                      g.input(std::move(x1)), false);
    const nn::Tensor& lv = g.val(logits);
    for (size_t i = 0; i < b; ++i) {
      const float* row = lv.v.data() + i * kNumActions;
      int best = 0;
      for (int a = 1; a < kNumActions; ++a)
        if (row[a] > row[best]) best = a;
      if (best == acts[i]) ++correct;
    }
    pos += b;
  }
  return static_cast<float>(correct) / static_cast<float>(n);
}

// --- frozen-model inference --------------------------------------------------------

// grid-of-cells attention map for one frame pair
inline Image adm_attention(AdmModel& model, const Image& obs, const Image& next) {
  nn::Graph g;
  auto f = model.forward(g, g.input(obs_to_tensor(obs)), g.input(obs_to_tensor(next)));
  const nn::Tensor& t = g.val(f.attn_rows);
  int grid = model.config().grid();
  Image out(grid, grid);
  std::copy(t.v.begin(), t.v.end(), out.px.begin());
  return out;
}

// nearest-cell upsample to obs_size, then threshold
inline Mask adm_mask(const Image& attn, int obs_size, float threshold) {
  if (attn.width <= 0 || obs_size % attn.width != 0 || attn.width != attn.height)
    throw std::invalid_argument("adm_mask: attention grid does not tile the image");
  int k = obs_size / attn.width;
  Mask m(obs_size, obs_size);
  for (int y = 0; y < obs_size; ++y)
    for (int x = 0; x < obs_size; ++x)
      m.m[static_cast<size_t>(y) * obs_size + x] =
          attn.at(x / k, y / k) > threshold ? 1 : 0;
  return m;
}

inline Mask adm_predict_mask(AdmModel& model, const Image& obs, const Image& next,
                             float threshold) {
  return adm_mask(adm_attention(model, obs, next), model.config().obs_size,
                  threshold);
}

inline Mask adm_predict_mask(AdmModel& model, const Image& obs, const Image& next) {
  return adm_predict_mask(model, obs, next, model.config().threshold);
}

// eval-mode concatenated frame encodings, the inverse model's probe latent
inline std::vector<float> inverse_latent(InverseModel& model, const Image& obs,
                                         const Image& next) {
  nn::Graph g;
  auto z = model.latent(g, g.input(obs_to_tensor(obs)), g.input(obs_to_tensor(next)),
                        false);
  return g.val(z).v;
}

}  // namespace cenlab
