#pragma once

#include <vector>

#include "cenlab/env.hpp"

namespace testutil {

using namespace cenlab;

constexpr uint32_t kTurnLeft = 0, kTurnRight = 1, kForward = 2;

// Smallest seed whose first spider draw is `want`.
inline uint64_t seed_with_draw(uint32_t want) {
  for (uint64_t s = 0;; ++s) {
    CounterRng r(s);
    if (r.below(3) == want) return s;
  }
}

inline GridState spiders_state(int ax, int ay, int gx, int gy, int sx, int sy,
                               Orientation ori, uint64_t seed) {
  GridState s;
  s.kind = EnvKind::Spiders;
  s.width = s.height = 6;
  s.rng = CounterRng(seed);
  s.entities = {
      {0, EntityKind::Agent, static_cast<int16_t>(ax), static_cast<int16_t>(ay)},
      {1, EntityKind::Gem, static_cast<int16_t>(gx), static_cast<int16_t>(gy)},
      {2, EntityKind::Spider, static_cast<int16_t>(sx), static_cast<int16_t>(sy),
       Color::None, ori},
  };
  return s;
}

// Movers get ids 0..n-1 in order; the fixed spike row and the wall ring are
// appended as in make_env.
inline GridState clusters_state(std::vector<Entity> movers) {
  GridState s;
  s.kind = EnvKind::Clusters;
  s.width = 13;
  s.height = 10;
  s.rng = CounterRng(1);
  uint16_t id = 0;
  for (Entity e : movers) {
    e.id = id++;
    s.entities.push_back(e);
  }
  for (int x = 4; x <= 8; ++x)
    s.entities.push_back({id++, EntityKind::Spikes, static_cast<int16_t>(x), 4});
  detail::add_wall_ring(s, id);
  return s;
}

}  // namespace testutil
