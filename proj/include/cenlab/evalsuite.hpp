#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cenlab/dataset.hpp"
#include "cenlab/nn.hpp"

namespace cenlab {

// --- pixel F1 -------------------------------------------------------------

// 2TP/(2TP+FP+FN); two empty masks agree perfectly, one empty scores zero.
inline double pixel_f1(const Mask& pred, const Mask& gt) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw std::invalid_argument("pixel_f1: mask shape mismatch");
  size_t tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < pred.m.size(); ++i) {
    bool p = pred.m[i] != 0, g = gt.m[i] != 0;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
  if (tp + fp + fn == 0) return 1.0;
  if (tp + fp == 0 || tp + fn == 0) return 0.0;
  return 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
}

// --- rollout evaluation -----------------------------------------------------

struct F1Report {
  EnvKind kind = EnvKind::Spiders;
  uint64_t seed = 0;
  int steps = 0;
  double overall = 0;
  // conditional means over the steps where the condition held
  double agent_moving = 0;
  double box_moving = 0;
  double light_event = 0;
  int agent_steps = 0;
  int box_steps = 0;
  int light_steps = 0;
};

enum class GtMask : uint8_t { Counterfactual = 0, Entities = 1 };

struct PixelEvalOptions {
  int steps = 5000;
  GtMask gt = GtMask::Counterfactual;
  int max_episode_steps = 500;
};

// Random-policy rollout on a fresh seed; per step the model mask is scored
// against the oracle mask, and condition flags come from attribute changes
// along the realized transition.
inline F1Report evaluate_pixel(const MaskSource& source, EnvKind kind, uint64_t seed,
                               PixelEvalOptions opt = {}) {
  if (opt.steps <= 0) throw std::invalid_argument("evaluate_pixel: steps must be positive");
  const AttributeSchema& schema = attribute_schema(kind);
  F1Report rep;
  rep.kind = kind;
  rep.seed = seed;
  rep.steps = opt.steps;

  CounterRng policy(derive_seed(seed, 2));
  uint64_t episode = 0;
  GridState s = make_env(kind, derive_seed(seed, 3000 + episode));
  Image obs = render(s);
  double sum = 0, agent_sum = 0, box_sum = 0, light_sum = 0;

  for (int t = 0; t < opt.steps; ++t) {
    if (s.done || s.step_count >= static_cast<uint32_t>(opt.max_episode_steps)) {
      ++episode;
      s = make_env(kind, derive_seed(seed, 3000 + episode));
      obs = render(s);
    }
    auto a = static_cast<AgentAction>(policy.below(kNumActions));
    GridState n = step(s, a);
    Image next_obs = render(n);
    Image effect = image_diff(next_obs, obs);
    Mask gt = opt.gt == GtMask::Counterfactual ? gt_mask_counterfactual(s, a)
                                               : gt_mask_entities(s, a);
    TransitionView view{s, n, obs, next_obs, a, effect};
    double f1 = pixel_f1(source(view), gt);
    sum += f1;

    std::vector<int> pre = attribute_values(s);
    std::vector<int> post = attribute_values(n);
    bool agent_moved = false, box_moved = false, light_changed = false;
    for (size_t i = 0; i < schema.size(); ++i) {
      if (pre[i] == post[i]) continue;
      if (schema.groups[i] == AttrGroup::Agent) agent_moved = true;
      if (schema.groups[i] == AttrGroup::Box) box_moved = true;
      if (schema.groups[i] == AttrGroup::Light) light_changed = true;
    }
    if (agent_moved) {
      ++rep.agent_steps;
      agent_sum += f1;
    }
    if (box_moved) {
      ++rep.box_steps;
      box_sum += f1;
    }
    if (light_changed) {
      ++rep.light_steps;
      light_sum += f1;
    }
    s = std::move(n);
    obs = std::move(next_obs);
  }
  rep.overall = sum / opt.steps;
  rep.agent_moving = rep.agent_steps ? agent_sum / rep.agent_steps : 0.0;
  rep.box_moving = rep.box_steps ? box_sum / rep.box_steps : 0.0;
  rep.light_event = rep.light_steps ? light_sum / rep.light_steps : 0.0;
  return rep;
}

// --- linear probes ----------------------------------------------------------

struct LinearProbe {
  nn::Tensor w;  // [3, d]
  nn::Tensor b;  // [3]
  std::array<bool, 3> present{};  // classes seen in the train split
  bool missing_class = false;
  double best_val_loss = 0;
};

struct ProbeTrainOptions {
  int epochs = 40;
  int batch = 128;
  float lr = 3e-3f;
  std::vector<uint64_t> seeds = {101, 102, 103};
};

struct ProbeAttrResult {
  std::string name;
  double mean_f1 = 0;
  double std_f1 = 0;
  bool missing_class = false;  // in any seed's train split
};

struct ProbeReport {
  EnvKind kind = EnvKind::Spiders;
  std::vector<ProbeAttrResult> attrs;
  std::vector<uint64_t> seeds;
  std::vector<std::vector<double>> per_seed;  // [attr][seed]
};

namespace detail {

// Row accessor so probe training works off masked effects and latent
// vectors alike without copying the feature table.
struct FeatureView {
  size_t n = 0;
  size_t d = 0;
  std::function<const float*(size_t)> row;
};

inline LinearProbe train_one_probe(const FeatureView& X, const std::vector<uint8_t>& y,
                                   const SplitIndices& split, uint64_t seed,
                                   const ProbeTrainOptions& opt) {
  int d = static_cast<int>(X.d);
  LinearProbe probe;
  probe.w = nn::Tensor({3, d});
  probe.b = nn::Tensor({3});
  for (size_t i : split.train) probe.present[y[i]] = true;
  probe.missing_class = !(probe.present[0] && probe.present[1] && probe.present[2]);

  nn::ParamTensor w("w", {3, d}), b("b", {3});
  // Small random init rather than zeros: with zero weights every logit ties,
  // argmax collapses onto one class, and chance-level data would score far
  // from the 1/3 macro-F1 a chance probe should report.
  CounterRng init_rng(derive_seed(seed, 11));
  for (float& v : w.value.v) v = static_cast<float>((init_rng.unit() - 0.5) * 0.02);
  for (float& v : b.value.v) v = static_cast<float>((init_rng.unit() - 0.5) * 0.02);
  std::vector<nn::ParamTensor*> params = {&w, &b};
  nn::Adam adam(opt.lr);

  auto eval_loss = [&](const std::vector<size_t>& idx) {
    double total = 0;
    size_t done = 0;
    while (done < idx.size()) {
      size_t bn = std::min<size_t>(opt.batch, idx.size() - done);
      nn::Tensor xb({static_cast<int>(bn), d});
      std::vector<int> lb(bn);
      for (size_t i = 0; i < bn; ++i) {
        std::copy_n(X.row(idx[done + i]), d, xb.v.data() + i * d);
        lb[i] = y[idx[done + i]];
      }
      nn::Graph g;
      auto logits = g.linear(g.input(std::move(xb)), g.param(w), g.param(b));
      total += static_cast<double>(g.scalar(g.cross_entropy(logits, lb))) *
               static_cast<double>(bn);
      done += bn;
    }
    return total / static_cast<double>(idx.size());
  };

  std::vector<size_t> order = split.train;
  CounterRng shuffle_rng(derive_seed(seed, 7));
  probe.best_val_loss = eval_loss(split.val);
  probe.w = w.value;
  probe.b = b.value;
  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[shuffle_rng.below(static_cast<uint32_t>(i))]);
    size_t done = 0;
    while (done < order.size()) {
      size_t bn = std::min<size_t>(opt.batch, order.size() - done);
      nn::Tensor xb({static_cast<int>(bn), d});
      std::vector<int> lb(bn);
      for (size_t i = 0; i < bn; ++i) {
        std::copy_n(X.row(order[done + i]), d, xb.v.data() + i * d);
        lb[i] = y[order[done + i]];
      }
      w.zero_grad();
      b.zero_grad();
      nn::Graph g;
      auto logits = g.linear(g.input(std::move(xb)), g.param(w), g.param(b));
      g.backward(g.cross_entropy(logits, lb));
      adam.step(params);
      done += bn;
    }
    double val = eval_loss(split.val);
    if (val < probe.best_val_loss) {
      probe.best_val_loss = val;
      probe.w = w.value;
      probe.b = b.value;
    }
  }
  return probe;
}

// Macro-F1 over the classes the probe saw in training; prediction argmax is
// restricted to those classes so an unseen class cannot be emitted.
inline double probe_macro_f1(const LinearProbe& probe, const FeatureView& X,
                             const std::vector<uint8_t>& y,
                             const std::vector<size_t>& idx) {
  int d = static_cast<int>(X.d);
  std::array<size_t, 3> tp{}, fp{}, fn{};
  for (size_t i : idx) {
    const float* row = X.row(i);
    int best = -1;
    double best_v = 0;
    for (int c = 0; c < 3; ++c) {
      if (!probe.present[c]) continue;
      double v = probe.b.v[c];
      for (int j = 0; j < d; ++j) v += static_cast<double>(probe.w.v[c * d + j]) * row[j];
      if (best < 0 || v > best_v) {
        best = c;
        best_v = v;
      }
    }
    int truth = y[i];
    if (best == truth) ++tp[truth];
    else {
      if (best >= 0) ++fp[best];
      ++fn[truth];
    }
  }
  double sum = 0;
  int classes = 0;
  for (int c = 0; c < 3; ++c) {
    if (!probe.present[c]) continue;
    ++classes;
    size_t denom = 2 * tp[c] + fp[c] + fn[c];
    sum += denom == 0 ? 1.0 : 2.0 * tp[c] / static_cast<double>(denom);
  }
  return classes ? sum / classes : 0.0;
}

inline std::vector<uint8_t> attr_column(const std::vector<std::vector<uint8_t>>& labels,
                                        size_t attr) {
  std::vector<uint8_t> out(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) out[i] = labels[i][attr];
  return out;
}

inline ProbeReport probe_features(EnvKind kind, const FeatureView& X,
                                  const std::vector<std::vector<uint8_t>>& labels,
                                  const std::vector<std::string>& attr_names,
                                  const ProbeTrainOptions& opt) {
  if (X.n != labels.size() || X.n == 0)
    throw std::invalid_argument("probe: features and labels must align and be non-empty");
  ProbeReport rep;
  rep.kind = kind;
  rep.seeds = opt.seeds;
  rep.per_seed.assign(attr_names.size(), {});
  for (size_t a = 0; a < attr_names.size(); ++a) {
    std::vector<uint8_t> y = attr_column(labels, a);
    ProbeAttrResult res;
    res.name = attr_names[a];
    for (uint64_t seed : opt.seeds) {
      SplitIndices split = split_indices(X.n, seed);
      LinearProbe probe = train_one_probe(X, y, split, seed, opt);
      res.missing_class = res.missing_class || probe.missing_class;
      rep.per_seed[a].push_back(probe_macro_f1(probe, X, y, split.test));
    }
    const std::vector<double>& f = rep.per_seed[a];
    double mean = 0;
    for (double v : f) mean += v;
    mean /= static_cast<double>(f.size());
    double var = 0;
    for (double v : f) var += (v - mean) * (v - mean);
    res.mean_f1 = mean;
    res.std_f1 = f.size() > 1 ? std::sqrt(var / static_cast<double>(f.size() - 1)) : 0.0;
    rep.attrs.push_back(std::move(res));
  }
  return rep;
}

}  // namespace detail

// Per-attribute linear classifiers on flattened masked effects, one split per
// seed, selected on validation loss.
inline std::vector<LinearProbe> train_probe(const ProbeDataset& pd, uint64_t seed,
                                            ProbeTrainOptions opt = {}) {
  detail::FeatureView X{pd.samples.size(),
                        static_cast<size_t>(pd.obs_h) * pd.obs_w,
                        [&pd](size_t i) { return pd.samples[i].masked_effect.data(); }};
  SplitIndices split = split_indices(X.n, seed);
  std::vector<LinearProbe> probes;
  for (size_t a = 0; a < pd.attr_names.size(); ++a) {
    std::vector<uint8_t> y(pd.samples.size());
    for (size_t i = 0; i < y.size(); ++i) y[i] = pd.samples[i].labels[a];
    probes.push_back(detail::train_one_probe(X, y, split, seed, opt));
  }
  return probes;
}

// Test-split macro-F1 for classifiers produced by train_probe with the same seed.
inline std::vector<double> probe_f1(const std::vector<LinearProbe>& probes,
                                    const ProbeDataset& pd, uint64_t seed) {
  if (probes.size() != pd.attr_names.size())
    throw std::invalid_argument("probe_f1: classifier count mismatch");
  detail::FeatureView X{pd.samples.size(),
                        static_cast<size_t>(pd.obs_h) * pd.obs_w,
                        [&pd](size_t i) { return pd.samples[i].masked_effect.data(); }};
  SplitIndices split = split_indices(X.n, seed);
  std::vector<double> out;
  for (size_t a = 0; a < probes.size(); ++a) {
    std::vector<uint8_t> y(pd.samples.size());
    for (size_t i = 0; i < y.size(); ++i) y[i] = pd.samples[i].labels[a];
    out.push_back(detail::probe_macro_f1(probes[a], X, y, split.test));
  }
  return out;
}

// Mean +/- std across seeds for every attribute of a probe dataset.
inline ProbeReport probe_report(const ProbeDataset& pd, ProbeTrainOptions opt = {}) {
  detail::FeatureView X{pd.samples.size(),
                        static_cast<size_t>(pd.obs_h) * pd.obs_w,
                        [&pd](size_t i) { return pd.samples[i].masked_effect.data(); }};
  std::vector<std::vector<uint8_t>> labels(pd.samples.size());
  for (size_t i = 0; i < labels.size(); ++i) labels[i] = pd.samples[i].labels;
  return detail::probe_features(pd.kind, X, labels, pd.attr_names, opt);
}

// Same protocol from a frozen latent: labels are recomputed by replaying each
// stored transition from its snapshot.
inline ProbeReport latent_probe(
    const std::function<std::vector<float>(const Sample&)>& latent_fn,
    const Dataset& ds, ProbeTrainOptions opt = {}) {
  if (ds.samples.empty()) throw std::invalid_argument("latent_probe: empty dataset");
  std::vector<std::vector<float>> latents(ds.samples.size());
  std::vector<std::vector<uint8_t>> labels(ds.samples.size());
  for (size_t i = 0; i < ds.samples.size(); ++i) {
    latents[i] = latent_fn(ds.samples[i]);
    GridState pre = restore(ds.samples[i].snap);
    GridState post = step(pre, ds.samples[i].action);
    labels[i] = attribute_labels(pre, post);
  }
  detail::FeatureView X{latents.size(), latents[0].size(),
                        [&latents](size_t i) { return latents[i].data(); }};
  return detail::probe_features(ds.kind, X, labels, attribute_schema(ds.kind).names, opt);
}

// Mean F1 over the attributes of one schema group (e.g. the agent's x and y).
inline double group_f1(const ProbeReport& rep, EnvKind kind, AttrGroup group) {
  const AttributeSchema& schema = attribute_schema(kind);
  double sum = 0;
  int count = 0;
  for (size_t a = 0; a < rep.attrs.size(); ++a) {
    if (schema.groups[a] != group) continue;
    sum += rep.attrs[a].mean_f1;
    ++count;
  }
  if (count == 0) throw std::invalid_argument("group_f1: group absent from schema");
  return sum / count;
}

// --- reports ----------------------------------------------------------------

inline nlohmann::json f1_report_json(const F1Report& rep) {
  return {{"env", env_kind_name(rep.kind)},
          {"seed", rep.seed},
          {"steps", rep.steps},
          {"overall_f1", rep.overall},
          {"agent_moving_f1", rep.agent_moving},
          {"agent_moving_steps", rep.agent_steps},
          {"box_moving_f1", rep.box_moving},
          {"box_moving_steps", rep.box_steps},
          {"light_event_f1", rep.light_event},
          {"light_event_steps", rep.light_steps}};
}

inline nlohmann::json probe_report_json(const ProbeReport& rep) {
  nlohmann::json attrs = nlohmann::json::array();
  for (size_t a = 0; a < rep.attrs.size(); ++a) {
    attrs.push_back({{"attribute", rep.attrs[a].name},
                     {"mean_f1", rep.attrs[a].mean_f1},
                     {"std_f1", rep.attrs[a].std_f1},
                     {"missing_class", rep.attrs[a].missing_class},
                     {"per_seed_f1", rep.per_seed[a]}});
  }
  nlohmann::json seeds = nlohmann::json::array();
  for (uint64_t s : rep.seeds) seeds.push_back(s);
  return {{"env", env_kind_name(rep.kind)}, {"seeds", seeds}, {"attributes", attrs}};
}

namespace detail {

inline void write_text_file(const std::string& path, const std::string& text) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + path);
  fwrite_all(f, reinterpret_cast<const uint8_t*>(text.data()), text.size(), path);
  std::fclose(f);
}

}  // namespace detail

inline void write_f1_report(const std::string& dir, const std::string& name,
                            const F1Report& rep) {
  std::filesystem::create_directories(dir);
  detail::write_text_file(dir + "/" + name + ".json", f1_report_json(rep).dump(2) + "\n");
  char csv[512];
  std::snprintf(csv, sizeof(csv),
                "env,seed,steps,overall_f1,agent_moving_f1,agent_moving_steps,"
                "box_moving_f1,box_moving_steps,light_event_f1,light_event_steps\n"
                "%s,%llu,%d,%.6f,%.6f,%d,%.6f,%d,%.6f,%d\n",
                env_kind_name(rep.kind), static_cast<unsigned long long>(rep.seed),
                rep.steps, rep.overall, rep.agent_moving, rep.agent_steps,
                rep.box_moving, rep.box_steps, rep.light_event, rep.light_steps);
  detail::write_text_file(dir + "/" + name + ".csv", csv);
}

inline void write_probe_report(const std::string& dir, const std::string& name,
                               const ProbeReport& rep) {
  std::filesystem::create_directories(dir);
  detail::write_text_file(dir + "/" + name + ".json",
                          probe_report_json(rep).dump(2) + "\n");
  std::string csv = "env,attribute,mean_f1,std_f1,missing_class\n";
  for (const ProbeAttrResult& a : rep.attrs) {
    char row[256];
    std::snprintf(row, sizeof(row), "%s,%s,%.6f,%.6f,%d\n", env_kind_name(rep.kind),
                  a.name.c_str(), a.mean_f1, a.std_f1, a.missing_class ? 1 : 0);
    csv += row;
  }
  detail::write_text_file(dir + "/" + name + ".csv", csv);
}

// --- overlays ----------------------------------------------------------------

// Effect magnitude as grayscale with the mask painted red on top.
inline void write_overlay_png(const std::string& path, const Image& effect,
                              const Mask& mask) {
  if (effect.width != mask.width || effect.height != mask.height)
    throw std::invalid_argument("overlay: effect and mask shapes differ");
  std::vector<uint8_t> rgb(static_cast<size_t>(effect.width) * effect.height * 3);
  for (size_t i = 0; i < effect.px.size(); ++i) {
    uint8_t g = quantize8(std::min(1.0f, std::abs(effect.px[i])));
    if (mask.m[i]) {
      rgb[i * 3] = 255;
      rgb[i * 3 + 1] = g / 3;
      rgb[i * 3 + 2] = g / 3;
    } else {
      rgb[i * 3] = g;
      rgb[i * 3 + 1] = g;
      rgb[i * 3 + 2] = g;
    }
  }
  write_png(path, effect.width, effect.height, 3, rgb);
}

// A short rollout dumped as overlay PNGs plus one F1 sidecar per step.
inline std::vector<double> dump_mask_overlays(const std::string& dir,
                                              const MaskSource& source, EnvKind kind,
                                              uint64_t seed, int n,
                                              PixelEvalOptions opt = {}) {
  std::filesystem::create_directories(dir);
  CounterRng policy(derive_seed(seed, 2));
  uint64_t episode = 0;
  GridState s = make_env(kind, derive_seed(seed, 3000 + episode));
  Image obs = render(s);
  std::vector<double> f1s;
  for (int t = 0; t < n; ++t) {
    if (s.done || s.step_count >= static_cast<uint32_t>(opt.max_episode_steps)) {
      ++episode;
      s = make_env(kind, derive_seed(seed, 3000 + episode));
      obs = render(s);
    }
    auto a = static_cast<AgentAction>(policy.below(kNumActions));
    GridState next = step(s, a);
    Image next_obs = render(next);
    Image effect = image_diff(next_obs, obs);
    Mask gt = opt.gt == GtMask::Counterfactual ? gt_mask_counterfactual(s, a)
                                               : gt_mask_entities(s, a);
    TransitionView view{s, next, obs, next_obs, a, effect};
    Mask pred = source(view);
    double f1 = pixel_f1(pred, gt);
    f1s.push_back(f1);
    char base[64];
    std::snprintf(base, sizeof(base), "step_%04d", t);
    write_overlay_png(dir + "/" + base + ".png", effect, pred);
    char sidecar[64];
    std::snprintf(sidecar, sizeof(sidecar), "f1 %.6f\n", f1);
    detail::write_text_file(dir + "/" + base + ".f1.txt", sidecar);
    s = std::move(next);
    obs = std::move(next_obs);
  }
  return f1s;
}

}  // namespace cenlab
