#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <future>
#include <string>
#include <vector>

#include "cenlab/env.hpp"
#include "cenlab/oracle.hpp"
#include "cenlab/render.hpp"

namespace cenlab {

// Observations hold palette values, all multiples of 1/128, so a sample is
// stored as two u8 planes (value * 128) and materialized to float on
// demand. The float reconstruction is exact, effects included.
struct Sample {
  std::vector<uint8_t> snap;
  std::vector<uint8_t> obs;       // v * 128
  std::vector<uint8_t> next_obs;  // v * 128
  AgentAction action = AgentAction::Stay;

  bool operator==(const Sample&) const = default;
};

inline std::vector<uint8_t> pack_obs(const Image& img) {
  std::vector<uint8_t> out(img.px.size());
  for (size_t i = 0; i < out.size(); ++i) {
    float scaled = img.px[i] * 128.0f;
    auto b = static_cast<uint8_t>(scaled);
    if (static_cast<float>(b) != scaled)
      throw std::logic_error("observation pixel is not a palette value");
    out[i] = b;
  }
  return out;
}

inline Image unpack_obs(const std::vector<uint8_t>& packed, int w = kObsSize,
                        int h = kObsSize) {
  Image img(w, h);
  for (size_t i = 0; i < packed.size(); ++i)
    img.px[i] = static_cast<float>(packed[i]) / 128.0f;
  return img;
}

inline Image sample_obs(const Sample& s) { return unpack_obs(s.obs); }

inline Image sample_effect(const Sample& s) {
  Image img(kObsSize, kObsSize);
  for (size_t i = 0; i < s.obs.size(); ++i)
    img.px[i] =
        static_cast<float>(static_cast<int>(s.next_obs[i]) - static_cast<int>(s.obs[i])) /
        128.0f;
  return img;
}

struct Dataset {
  EnvKind kind = EnvKind::Spiders;
  int obs_h = kObsSize;
  int obs_w = kObsSize;
  std::vector<Sample> samples;

  bool operator==(const Dataset&) const = default;
};

struct CollectOptions {
  int max_episode_steps = 500;
  int threads = 1;
};

namespace detail {

// Shards are a fixed logical size so the file content depends only on
// (kind, seed, n), never on the worker count.
inline constexpr size_t kShardSize = 8192;

inline std::vector<Sample> collect_shard(EnvKind kind, uint64_t shard_seed, size_t count,
                                         int max_episode_steps) {
  std::vector<Sample> out;
  out.reserve(count);
  CounterRng policy(derive_seed(shard_seed, 1));
  uint64_t episode = 0;
  GridState s = make_env(kind, derive_seed(shard_seed, 1000 + episode));
  Image obs = render(s);
  while (out.size() < count) {
    if (s.done || s.step_count >= static_cast<uint32_t>(max_episode_steps)) {
      ++episode;
      s = make_env(kind, derive_seed(shard_seed, 1000 + episode));
      obs = render(s);
    }
    auto a = static_cast<AgentAction>(policy.below(kNumActions));
    GridState n = step(s, a);
    Image next_obs = render(n);
    Sample smp;
    smp.snap = snapshot(s);
    smp.obs = pack_obs(obs);
    smp.next_obs = pack_obs(next_obs);
    smp.action = a;
    out.push_back(std::move(smp));
    s = std::move(n);
    obs = std::move(next_obs);
  }
  return out;
}

}  // namespace detail

inline Dataset collect(EnvKind kind, uint64_t seed, size_t n,
                       CollectOptions opt = {}) {
  Dataset ds;
  ds.kind = kind;
  size_t shards = (n + detail::kShardSize - 1) / detail::kShardSize;
  std::vector<std::vector<Sample>> parts(shards);

  auto run_shard = [&](size_t i) {
    size_t count = std::min(detail::kShardSize, n - i * detail::kShardSize);
    parts[i] = detail::collect_shard(kind, derive_seed(seed, i), count,
                                     opt.max_episode_steps);
  };

  if (opt.threads <= 1 || shards <= 1) {
    for (size_t i = 0; i < shards; ++i) run_shard(i);
  } else {
    size_t next = 0;
    while (next < shards) {
      size_t batch = std::min<size_t>(opt.threads, shards - next);
      std::vector<std::future<void>> fs;
      for (size_t j = 0; j < batch; ++j)
        fs.push_back(std::async(std::launch::async, run_shard, next + j));
      for (auto& f : fs) f.get();
      next += batch;
    }
  }
  ds.samples.reserve(n);
  for (auto& p : parts)
    for (auto& s : p) ds.samples.push_back(std::move(s));
  return ds;
}

// --- Transition dataset file format ("CEND") ----------------------------

inline constexpr uint32_t kDatasetVersion = 1;

inline void save_dataset(const std::string& path, const Dataset& ds) {
  ByteWriter w;
  w.magic("CEND");
  w.u32(kDatasetVersion);
  w.u8(static_cast<uint8_t>(ds.kind));
  w.u32(static_cast<uint32_t>(ds.obs_h));
  w.u32(static_cast<uint32_t>(ds.obs_w));
  w.u64(ds.samples.size());
  for (const Sample& s : ds.samples) {
    w.u8(static_cast<uint8_t>(s.action));
    w.u32(static_cast<uint32_t>(s.snap.size()));
    w.bytes(s.snap.data(), s.snap.size());
    for (uint8_t b : s.obs) w.f32(static_cast<float>(b) / 128.0f);
    for (size_t i = 0; i < s.obs.size(); ++i)
      w.f32(static_cast<float>(static_cast<int>(s.next_obs[i]) -
                               static_cast<int>(s.obs[i])) /
            128.0f);
  }
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + path);
  const auto& buf = w.data();
  if (std::fwrite(buf.data(), 1, buf.size(), f) != buf.size()) {
    std::fclose(f);
    throw std::runtime_error("short write: " + path);
  }
  std::fclose(f);
}

inline std::vector<uint8_t> read_file(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open " + path);
  std::fseek(f, 0, SEEK_END);
  long len = std::ftell(f);
  std::fseek(f, 0, SEEK_SET);
  std::vector<uint8_t> buf(static_cast<size_t>(len));
  if (len > 0 && std::fread(buf.data(), 1, buf.size(), f) != buf.size()) {
    std::fclose(f);
    throw std::runtime_error("short read: " + path);
  }
  std::fclose(f);
  return buf;
}

inline void write_file(const std::string& path, const std::vector<uint8_t>& buf) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open " + path);
  if (!buf.empty() && std::fwrite(buf.data(), 1, buf.size(), f) != buf.size()) {
    std::fclose(f);
    throw std::runtime_error("short write: " + path);
  }
  std::fclose(f);
}

namespace detail {

inline uint8_t quantize_palette(float v, const char* what) {
  float scaled = v * 128.0f;
  float r = std::round(scaled);
  if (r != scaled || r < 0.0f || r > 128.0f)
    throw FormatError(std::string(what) + ": pixel is not a palette value");
  return static_cast<uint8_t>(r);
}

}  // namespace detail

inline Dataset load_dataset(const std::string& path) {
  std::vector<uint8_t> buf = read_file(path);
  ByteReader r(buf);
  r.expect_magic("CEND");
  uint32_t version = r.u32();
  if (version != kDatasetVersion) throw FormatError("unsupported dataset version");
  Dataset ds;
  uint8_t kind = r.u8();
  if (kind > 2) throw FormatError("bad env kind in dataset");
  ds.kind = static_cast<EnvKind>(kind);
  ds.obs_h = static_cast<int>(r.u32());
  ds.obs_w = static_cast<int>(r.u32());
  if (ds.obs_h != kObsSize || ds.obs_w != kObsSize)
    throw FormatError("unsupported observation size");
  uint64_t count = r.u64();
  size_t plane = static_cast<size_t>(ds.obs_h) * ds.obs_w;
  ds.samples.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    Sample s;
    uint8_t a = r.u8();
    if (a >= kNumActions) throw FormatError("bad action in dataset");
    s.action = static_cast<AgentAction>(a);
    uint32_t snap_len = r.u32();
    s.snap.resize(snap_len);
    r.raw(s.snap.data(), snap_len);
    GridState st = restore(s.snap);  // validates; kind must match
    if (st.kind != ds.kind) throw FormatError("sample env kind mismatch");
    s.obs.resize(plane);
    for (size_t j = 0; j < plane; ++j)
      s.obs[j] = detail::quantize_palette(r.f32(), "obs");
    s.next_obs.resize(plane);
    for (size_t j = 0; j < plane; ++j) {
      float e = r.f32();
      if (e < -1.0f || e > 1.0f) throw FormatError("effect out of range");
      float scaled = e * 128.0f;
      if (std::round(scaled) != scaled) throw FormatError("effect: not a palette delta");
      int b = static_cast<int>(s.obs[j]) + static_cast<int>(scaled);
      if (b < 0 || b > 128) throw FormatError("effect leaves palette range");
      s.next_obs[j] = static_cast<uint8_t>(b);
    }
    ds.samples.push_back(std::move(s));
  }
  if (!r.done()) throw FormatError("trailing bytes in dataset");
  return ds;
}

// --- Probe dataset ("CENP") ----------------------------------------------

enum class EffectLabel : uint8_t { None = 0, Positive = 1, Negative = 2 };
inline constexpr int kNumLabels = 3;

struct ProbeSample {
  std::vector<float> masked_effect;  // m * e_p
  std::vector<uint8_t> labels;       // one per attribute

  bool operator==(const ProbeSample&) const = default;
};

struct ProbeDataset {
  EnvKind kind = EnvKind::Spiders;
  int obs_h = kObsSize;
  int obs_w = kObsSize;
  std::vector<std::string> attr_names;
  std::vector<uint8_t> balance_warning;  // per attribute
  std::vector<ProbeSample> samples;

  bool operator==(const ProbeDataset&) const = default;
};

// The transition handed to a mask source. `state` is the branch point;
// everything else is the realized step.
struct TransitionView {
  const GridState& state;
  const GridState& next;
  const Image& obs;
  const Image& next_obs;
  AgentAction action;
  const Image& effect;
};

using MaskSource = std::function<Mask(const TransitionView&)>;

struct ProbeOptions {
  size_t budget_factor = 300;   // candidate transitions per requested sample
  double tolerance = 0.2;      // relative class-share tolerance around 1/3
  int max_episode_steps = 500;
};

inline std::vector<uint8_t> attribute_labels(const GridState& pre, const GridState& post) {
  std::vector<int> a = attribute_values(pre);
  std::vector<int> b = attribute_values(post);
  std::vector<uint8_t> out(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    if (b[i] > a[i]) out[i] = static_cast<uint8_t>(EffectLabel::Positive);
    else if (b[i] < a[i]) out[i] = static_cast<uint8_t>(EffectLabel::Negative);
    else out[i] = static_cast<uint8_t>(EffectLabel::None);
  }
  return out;
}

// Class-balanced probe collection. Each candidate is scored by how many
// of its labels land in classes still short of n/3 minus how many land in
// classes already past it; acceptance thresholds loosen in phases as the
// candidate budget burns down. Exact balance is often infeasible jointly
// (a step changes x or y, never both, so the None classes of a coordinate
// pair must sum to at least n), and some classes are structurally empty
// (lights never turn off); scoring steers toward the feasible optimum and
// per-attribute warning flags report any class share left outside the
// tolerance band.
inline ProbeDataset collect_probe(EnvKind kind, uint64_t seed, size_t n,
                                  const MaskSource& mask_source,
                                  ProbeOptions opt = {}) {
  const AttributeSchema& schema = attribute_schema(kind);
  size_t attrs = schema.size();
  ProbeDataset pd;
  pd.kind = kind;
  pd.attr_names = schema.names;
  pd.balance_warning.assign(attrs, 0);
  pd.samples.reserve(n);

  std::vector<std::array<size_t, kNumLabels>> counts(attrs, {0, 0, 0});
  size_t target = (n + kNumLabels - 1) / kNumLabels;  // per-class goal
  size_t budget = opt.budget_factor * n;
  constexpr size_t kStallLimit = 20000;  // rejects in a row before loosening

  CounterRng policy(derive_seed(seed, 2));
  uint64_t episode = 0;
  GridState s = make_env(kind, derive_seed(seed, 5000 + episode));
  Image obs = render(s);
  size_t seen = 0;
  size_t since_accept = 0;
  int phase_floor = 1;

  while (pd.samples.size() < n) {
    if (s.done || s.step_count >= static_cast<uint32_t>(opt.max_episode_steps)) {
      ++episode;
      s = make_env(kind, derive_seed(seed, 5000 + episode));
      obs = render(s);
    }
    auto a = static_cast<AgentAction>(policy.below(kNumActions));
    GridState next = step(s, a);
    Image next_obs = render(next);
    ++seen;

    std::vector<uint8_t> labels = attribute_labels(s, next);
    int score = 0;
    for (size_t i = 0; i < attrs; ++i)
      score += counts[i][labels[i]] < target ? 1 : -1;
    if (since_accept >= kStallLimit && phase_floor < 3) {
      ++phase_floor;  // a dead phase never burns the whole budget
      since_accept = 0;
    }
    int phase = std::max(phase_floor,
                         seen < budget / 3 ? 1 : (seen < 2 * budget / 3 ? 2 : 3));
    bool accept = phase >= 3 || score >= (phase == 1 ? 1 : 0);

    if (accept) {
      since_accept = 0;
      Image effect = image_diff(next_obs, obs);
      TransitionView view{s, next, obs, next_obs, a, effect};
      Mask m = mask_source(view);
      ProbeSample ps;
      ps.masked_effect.resize(effect.px.size());
      for (size_t i = 0; i < effect.px.size(); ++i)
        ps.masked_effect[i] = m.m[i] ? effect.px[i] : 0.0f;
      ps.labels = labels;
      for (size_t i = 0; i < attrs; ++i) ++counts[i][labels[i]];
      pd.samples.push_back(std::move(ps));
    } else {
      ++since_accept;
    }
    s = std::move(next);
    obs = std::move(next_obs);
  }

  for (size_t i = 0; i < attrs; ++i) {
    for (int c = 0; c < kNumLabels; ++c) {
      double share = static_cast<double>(counts[i][c]) / static_cast<double>(n);
      if (std::abs(share - 1.0 / 3) > opt.tolerance / 3) pd.balance_warning[i] = 1;
    }
  }
  return pd;
}

// Seed-deterministic disjoint index split, 70/20/10 by default. Works for
// transition and probe datasets alike; callers index into samples.
struct SplitIndices {
  std::vector<size_t> train, val, test;
};

inline SplitIndices split_indices(size_t n, uint64_t seed, double train_frac = 0.7,
                                  double val_frac = 0.2) {
  if (train_frac <= 0 || val_frac <= 0 || train_frac + val_frac >= 1)
    throw std::invalid_argument("split fractions must be positive and sum below 1");
  size_t n_train = static_cast<size_t>(std::llround(train_frac * static_cast<double>(n)));
  size_t n_val = static_cast<size_t>(std::llround(val_frac * static_cast<double>(n)));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n)
    throw std::invalid_argument("dataset too small for a non-empty split");
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  CounterRng rng(derive_seed(seed, 3));
  for (size_t i = n; i > 1; --i)
    std::swap(idx[i - 1], idx[rng.below(static_cast<uint32_t>(i))]);
  SplitIndices out;
  out.train.assign(idx.begin(), idx.begin() + n_train);
  out.val.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
  out.test.assign(idx.begin() + n_train + n_val, idx.end());
  return out;
}

inline constexpr uint32_t kProbeVersion = 1;

inline void save_probe_dataset(const std::string& path, const ProbeDataset& pd) {
  ByteWriter w;
  w.magic("CENP");
  w.u32(kProbeVersion);
  w.u8(static_cast<uint8_t>(pd.kind));
  w.u32(static_cast<uint32_t>(pd.obs_h));
  w.u32(static_cast<uint32_t>(pd.obs_w));
  w.u16(static_cast<uint16_t>(pd.attr_names.size()));
  for (size_t i = 0; i < pd.attr_names.size(); ++i) {
    w.str(pd.attr_names[i]);
    w.u8(pd.balance_warning[i]);
  }
  w.u64(pd.samples.size());
  for (const ProbeSample& s : pd.samples) {
    for (uint8_t l : s.labels) w.u8(l);
    for (float v : s.masked_effect) w.f32(v);
  }
  write_file(path, w.data());
}

inline ProbeDataset load_probe_dataset(const std::string& path) {
  std::vector<uint8_t> buf = read_file(path);
  ByteReader r(buf);
  r.expect_magic("CENP");
  if (r.u32() != kProbeVersion) throw FormatError("unsupported probe version");
  ProbeDataset pd;
  uint8_t kind = r.u8();
  if (kind > 2) throw FormatError("bad env kind in probe dataset");
  pd.kind = static_cast<EnvKind>(kind);
  pd.obs_h = static_cast<int>(r.u32());
  pd.obs_w = static_cast<int>(r.u32());
  if (pd.obs_h != kObsSize || pd.obs_w != kObsSize)
    throw FormatError("unsupported observation size");
  uint16_t attrs = r.u16();
  const AttributeSchema& schema = attribute_schema(pd.kind);
  if (attrs != schema.size()) throw FormatError("attribute count mismatch");
  for (uint16_t i = 0; i < attrs; ++i) {
    std::string name = r.str();
    if (name != schema.names[i]) throw FormatError("attribute name mismatch: " + name);
    pd.attr_names.push_back(name);
    pd.balance_warning.push_back(r.u8());
  }
  uint64_t count = r.u64();
  size_t plane = static_cast<size_t>(pd.obs_h) * pd.obs_w;
  pd.samples.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    ProbeSample s;
    s.labels.resize(attrs);
    for (uint16_t j = 0; j < attrs; ++j) {
      s.labels[j] = r.u8();
      if (s.labels[j] >= kNumLabels) throw FormatError("bad label");
    }
    s.masked_effect.resize(plane);
    for (size_t j = 0; j < plane; ++j) {
      float v = r.f32();
      if (v < -1.0f || v > 1.0f) throw FormatError("masked effect out of range");
      s.masked_effect[j] = v;
    }
    pd.samples.push_back(std::move(s));
  }
  if (!r.done()) throw FormatError("trailing bytes in probe dataset");
  return pd;
}

}  // namespace cenlab
