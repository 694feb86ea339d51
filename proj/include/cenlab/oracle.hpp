#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "cenlab/env.hpp"
#include "cenlab/render.hpp"

namespace cenlab {

// Binary pixel mask over an observation.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> m;

  Mask() = default;
  Mask(int w, int h) : width(w), height(h), m(static_cast<size_t>(w) * h, 0) {}

  uint8_t& at(int x, int y) { return m[static_cast<size_t>(y) * width + x]; }
  uint8_t at(int x, int y) const { return m[static_cast<size_t>(y) * width + x]; }
  size_t count() const {
    size_t c = 0;
    for (uint8_t b : m) c += b != 0;
    return c;
  }
  bool operator==(const Mask&) const = default;
};

enum class Normality : uint8_t { Mode = 0, Mean = 1 };

inline const char* normality_name(Normality n) {
  return n == Normality::Mode ? "mode" : "mean";
}

// All five one-step branches from the same state. Each branch shares the
// stored rng stream, so everything the agent does not control evolves
// identically across branches.
struct BranchSet {
  Image base;                                      // render of the branch point
  std::array<GridState, kNumActions> next;         // post-step states
  std::array<Image, kNumActions> effect;           // render(next) - base
};

inline Image image_diff(const Image& a, const Image& b) {
  Image out(a.width, a.height);
  for (size_t i = 0; i < out.px.size(); ++i) out.px[i] = a.px[i] - b.px[i];
  return out;
}

inline BranchSet branch_effects(const GridState& s) {
  BranchSet bs;
  bs.base = render(s);
  for (int a = 0; a < kNumActions; ++a) {
    bs.next[a] = step(s, kAllActions[a]);
    bs.effect[a] = image_diff(render(bs.next[a]), bs.base);
  }
  return bs;
}

inline BranchSet branch_effects(const std::vector<uint8_t>& snap) {
  return branch_effects(restore(snap));
}

inline Image perceived_effect(const GridState& s, AgentAction a) {
  Image base = render(s);
  return image_diff(render(step(s, a)), base);
}

namespace detail {

// Elementwise mode over the five branch values, by exact float equality
// (palette arithmetic is exact, so equality is meaningful). On a tied max
// frequency: 0.0 wins if it appears among the five values at all, else the
// tied value of smallest magnitude, else the smaller (more negative) one.
inline float mode5(const std::array<float, kNumActions>& v) {
  std::array<float, kNumActions> cand{};
  std::array<int, kNumActions> cnt{};
  int nd = 0;
  for (float x : v) {
    int j = 0;
    while (j < nd && cand[j] != x) ++j;
    if (j == nd) {
      cand[nd] = x;
      cnt[nd] = 1;
      ++nd;
    } else {
      ++cnt[j];
    }
  }
  int best = 0;
  for (int j = 1; j < nd; ++j)
    if (cnt[j] > cnt[best]) best = j;
  bool tie = false;
  for (int j = 0; j < nd; ++j)
    if (j != best && cnt[j] == cnt[best]) tie = true;
  if (!tie) return cand[best];

  for (float x : v)
    if (x == 0.0f) return 0.0f;
  float pick = 0.0f;
  bool have = false;
  for (int j = 0; j < nd; ++j) {
    if (cnt[j] != cnt[best]) continue;
    if (!have || std::fabs(cand[j]) < std::fabs(pick) ||
        (std::fabs(cand[j]) == std::fabs(pick) && cand[j] < pick)) {
      pick = cand[j];
      have = true;
    }
  }
  return pick;
}

}  // namespace detail

inline Image normal_effect(const BranchSet& bs, Normality norm = Normality::Mode) {
  Image out(bs.base.width, bs.base.height);
  for (size_t i = 0; i < out.px.size(); ++i) {
    if (norm == Normality::Mode) {
      std::array<float, kNumActions> v{};
      for (int a = 0; a < kNumActions; ++a) v[a] = bs.effect[a].px[i];
      out.px[i] = detail::mode5(v);
    } else {
      double s = 0.0;
      for (int a = 0; a < kNumActions; ++a) s += bs.effect[a].px[i];
      out.px[i] = static_cast<float>(s / kNumActions);
    }
  }
  return out;
}

inline Image controlled_effect(const BranchSet& bs, AgentAction a,
                               Normality norm = Normality::Mode) {
  Image en = normal_effect(bs, norm);
  return image_diff(bs.effect[static_cast<int>(a)], en);
}

// Controlled pixels by counterfactual definition: where the taken branch's
// effect differs from the normal effect. Exact comparison; under mode
// normality the decomposition controlled + normal == perceived is exact.
inline Mask gt_mask_counterfactual(const GridState& s, AgentAction a,
                                   Normality norm = Normality::Mode) {
  BranchSet bs = branch_effects(s);
  Image ec = controlled_effect(bs, a, norm);
  Mask m(ec.width, ec.height);
  for (size_t i = 0; i < ec.px.size(); ++i) m.m[i] = ec.px[i] != 0.0f;
  return m;
}

inline Mask gt_mask_counterfactual(const std::vector<uint8_t>& snap, AgentAction a,
                                   Normality norm = Normality::Mode) {
  return gt_mask_counterfactual(restore(snap), a, norm);
}

// Entity kinds the agent can influence within one step, per environment.
inline std::vector<EntityKind> controlled_kinds(EnvKind kind) {
  switch (kind) {
    case EnvKind::Spiders: return {EntityKind::Agent};
    case EnvKind::Clusters: return {EntityKind::Agent, EntityKind::Box};
    case EnvKind::Lights:
      return {EntityKind::Agent, EntityKind::Button, EntityKind::Light};
  }
  return {};
}

namespace detail {

inline bool entity_attrs_changed(const GridState& pre, const GridState& post,
                                 size_t idx) {
  const Entity& a = pre.entities[idx];
  const Entity& b = post.entities[idx];
  if (a.kind == EntityKind::Button) {
    auto pressed = [](const GridState& s, const Entity& e) {
      const Entity& ag = s.entities[0];
      return ag.alive && ag.x == e.x && ag.y == e.y;
    };
    return pressed(pre, a) != pressed(post, b);
  }
  return a.x != b.x || a.y != b.y || a.lit != b.lit || a.alive != b.alive;
}

inline void mark_entity_rect(Mask& m, const GridState& s, const Entity& e) {
  int k = tile_size(s.kind);
  int ox = (kObsSize - k * s.width) / 2;
  int oy = (kObsSize - k * s.height) / 2;
  for (int y = 0; y < k; ++y)
    for (int x = 0; x < k; ++x) m.at(ox + k * e.x + x, oy + k * e.y + y) = 1;
}

}  // namespace detail

// Controlled pixels by entity bookkeeping: bounding boxes (pre and post) of
// controlled-kind entities whose attributes changed this step, intersected
// with the pixels the step actually touched.
inline Mask gt_mask_entities(const GridState& s, AgentAction a) {
  GridState post = step(s, a);
  Image ep = image_diff(render(post), render(s));
  Mask m(kObsSize, kObsSize);
  for (EntityKind kind : controlled_kinds(s.kind)) {
    for (size_t i = 0; i < s.entities.size(); ++i) {
      if (s.entities[i].kind != kind) continue;
      if (!detail::entity_attrs_changed(s, post, i)) continue;
      detail::mark_entity_rect(m, s, s.entities[i]);
      detail::mark_entity_rect(m, post, post.entities[i]);
    }
  }
  for (size_t i = 0; i < m.m.size(); ++i)
    if (ep.px[i] == 0.0f) m.m[i] = 0;
  return m;
}

inline Mask gt_mask_entities(const std::vector<uint8_t>& snap, AgentAction a) {
  return gt_mask_entities(restore(snap), a);
}

// Self-check over sampled rollout steps: exact decomposition, mode
// membership, and spider branch-invariance where applicable.
struct OracleCheckReport {
  int steps = 0;
  int decomposition_violations = 0;
  int membership_violations = 0;
  int spider_variant_pixels = 0;
  bool ok() const {
    return decomposition_violations == 0 && membership_violations == 0 &&
           spider_variant_pixels == 0;
  }
};

inline OracleCheckReport oracle_selfcheck(EnvKind kind, uint64_t seed, int steps) {
  OracleCheckReport rep;
  CounterRng policy(derive_seed(seed, 0xc4ecull));
  GridState s = make_env(kind, seed);
  for (int t = 0; t < steps; ++t) {
    if (s.done || s.step_count > 400) s = make_env(kind, derive_seed(seed, t));
    BranchSet bs = branch_effects(s);
    Image en = normal_effect(bs);
    for (int a = 0; a < kNumActions; ++a) {
      Image ec = image_diff(bs.effect[a], en);
      for (size_t i = 0; i < ec.px.size(); ++i) {
        if (ec.px[i] + en.px[i] != bs.effect[a].px[i]) ++rep.decomposition_violations;
      }
    }
    for (size_t i = 0; i < en.px.size(); ++i) {
      bool member = false;
      for (int a = 0; a < kNumActions; ++a)
        if (bs.effect[a].px[i] == en.px[i]) member = true;
      if (!member) ++rep.membership_violations;
    }
    if (kind == EnvKind::Spiders) {
      // The spider must land in the same pose in every branch.
      const Entity& s0 = bs.next[0].entities[2];
      for (int a = 1; a < kNumActions; ++a) {
        const Entity& sa = bs.next[a].entities[2];
        if (sa.x != s0.x || sa.y != s0.y || sa.orientation != s0.orientation)
          ++rep.spider_variant_pixels;
      }
    }
    ++rep.steps;
    AgentAction act = kAllActions[policy.below(kNumActions)];
    s = bs.next[static_cast<int>(act)];
  }
  return rep;
}

}  // namespace cenlab
