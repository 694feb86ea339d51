#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "cenlab/env.hpp"
#include "cenlab/image.hpp"

namespace cenlab {

inline constexpr int kObsSize = 64;

// Every palette entry is a multiple of 1/128, so observation pixels and all
// differences of them are exact in float32. The counterfactual oracle counts
// effect values by exact equality and relies on this.
namespace palette {
inline constexpr float kBg = 0.0f;
inline constexpr float kWall = 112.0f / 128;        // 0.875
inline constexpr float kAgent = 128.0f / 128;       // 1.0
inline constexpr float kSpiderBody = 104.0f / 128;  // 0.8125
inline constexpr float kSpiderFace = 24.0f / 128;   // 0.1875
inline constexpr float kGem = 88.0f / 128;          // 0.6875
inline constexpr float kBoxBlue = 72.0f / 128;      // 0.5625
inline constexpr float kBoxRed = 84.0f / 128;       // 0.65625
inline constexpr float kBlockBlue = 40.0f / 128;    // 0.3125
inline constexpr float kBlockRed = 52.0f / 128;     // 0.40625
inline constexpr float kSpikes = 44.0f / 128;       // 0.34375
inline constexpr float kButtonBlue = 64.0f / 128;   // 0.5
inline constexpr float kButtonGreen = 76.0f / 128;  // 0.59375
inline constexpr float kLightBlueOff = 24.0f / 128;   // 0.1875
inline constexpr float kLightGreenOff = 32.0f / 128;  // 0.25
inline constexpr float kLightBlueOn = 96.0f / 128;    // 0.75
inline constexpr float kLightGreenOn = 108.0f / 128;  // 0.84375
}  // namespace palette

// k x k glyph with per-pixel opacity; transparent pixels keep the underlay.
struct Tile {
  int k = 0;
  std::vector<float> v;
  std::vector<uint8_t> opaque;

  explicit Tile(int size) : k(size), v(static_cast<size_t>(size) * size, 0.0f),
                            opaque(static_cast<size_t>(size) * size, 0) {}
  void set(int x, int y, float val) {
    v[static_cast<size_t>(y) * k + x] = val;
    opaque[static_cast<size_t>(y) * k + x] = 1;
  }
  void fill(float val) {
    for (int y = 0; y < k; ++y)
      for (int x = 0; x < k; ++x) set(x, y, val);
  }
  bool operator==(const Tile&) const = default;
};

inline int tile_size(EnvKind kind) {
  ArenaSize a = arena_size(kind);
  return kObsSize / std::max(a.width, a.height);
}

inline Tile tile_for(EntityKind kind, Color color, Orientation orientation, bool lit,
                     int k) {
  using namespace palette;
  auto need_color = [&](Color a, Color b) {
    if (color != a && color != b)
      throw std::invalid_argument("invalid color for entity kind");
  };
  auto no_color = [&] {
    if (color != Color::None) throw std::invalid_argument("invalid color for entity kind");
  };
  Tile t(k);
  int border = std::max(1, k / 5);
  switch (kind) {
    case EntityKind::Wall:
      no_color();
      t.fill(kWall);
      break;
    case EntityKind::Agent:
      no_color();
      t.fill(kAgent);
      break;
    case EntityKind::Spider: {
      no_color();
      t.fill(kSpiderBody);
      for (int d = 0; d < border; ++d)
        for (int i = 0; i < k; ++i) switch (orientation) {
            case Orientation::North: t.set(i, d, kSpiderFace); break;
            case Orientation::South: t.set(i, k - 1 - d, kSpiderFace); break;
            case Orientation::West: t.set(d, i, kSpiderFace); break;
            case Orientation::East: t.set(k - 1 - d, i, kSpiderFace); break;
          }
      break;
    }
    case EntityKind::Gem:
      no_color();
      for (int y = 0; y < k; ++y)
        for (int x = 0; x < k; ++x)
          if (std::abs(2 * x - (k - 1)) + std::abs(2 * y - (k - 1)) <= k - 1)
            t.set(x, y, kGem);
      break;
    case EntityKind::Box:
      need_color(Color::Blue, Color::Red);
      t.fill(color == Color::Blue ? kBoxBlue : kBoxRed);
      break;
    case EntityKind::Block: {
      need_color(Color::Blue, Color::Red);
      float c = color == Color::Blue ? kBlockBlue : kBlockRed;
      for (int y = 0; y < k; ++y)
        for (int x = 0; x < k; ++x)
          if (x < border || y < border || x >= k - border || y >= k - border)
            t.set(x, y, c);
      break;
    }
    case EntityKind::Spikes:
      no_color();
      for (int y = 0; y < k; ++y)
        for (int x = 0; x < k; ++x)
          if ((x + y) % 2 == 0) t.set(x, y, kSpikes);
      break;
    case EntityKind::Button: {
      need_color(Color::Blue, Color::Green);
      float c = color == Color::Blue ? kButtonBlue : kButtonGreen;
      for (int y = border; y < k - border; ++y)
        for (int x = border; x < k - border; ++x) t.set(x, y, c);
      break;
    }
    case EntityKind::Light: {
      need_color(Color::Blue, Color::Green);
      if (lit) {
        t.fill(color == Color::Blue ? kLightBlueOn : kLightGreenOn);
      } else {
        float c = color == Color::Blue ? kLightBlueOff : kLightGreenOff;
        for (int y = 0; y < k; ++y)
          for (int x = 0; x < k; ++x)
            if (x < border || y < border || x >= k - border || y >= k - border)
              t.set(x, y, c);
      }
      break;
    }
  }
  return t;
}

namespace detail {

// Painter's order, low to high. The agent is always on top; dead entities
// are not drawn at all.
inline int z_order(EntityKind k) {
  switch (k) {
    case EntityKind::Wall: return 0;
    case EntityKind::Block:
    case EntityKind::Button:
    case EntityKind::Light: return 1;
    case EntityKind::Spikes: return 2;
    case EntityKind::Gem:
    case EntityKind::Box: return 3;
    case EntityKind::Spider: return 4;
    case EntityKind::Agent: return 5;
  }
  return 0;
}

}  // namespace detail

inline Image render(const GridState& s) {
  Image img(kObsSize, kObsSize);
  int k = tile_size(s.kind);
  int ox = (kObsSize - k * s.width) / 2;
  int oy = (kObsSize - k * s.height) / 2;

  std::vector<const Entity*> order;
  order.reserve(s.entities.size());
  for (const Entity& e : s.entities)
    if (e.alive) order.push_back(&e);
  std::stable_sort(order.begin(), order.end(), [](const Entity* a, const Entity* b) {
    return detail::z_order(a->kind) < detail::z_order(b->kind);
  });

  for (const Entity* e : order) {
    Tile t = tile_for(e->kind, e->color, e->orientation, e->lit, k);
    int bx = ox + k * e->x, by = oy + k * e->y;
    for (int y = 0; y < k; ++y)
      for (int x = 0; x < k; ++x)
        if (t.opaque[static_cast<size_t>(y) * k + x])
          img.at(bx + x, by + y) = t.v[static_cast<size_t>(y) * k + x];
  }
  return img;
}

using Observation = Image;

}  // namespace cenlab
