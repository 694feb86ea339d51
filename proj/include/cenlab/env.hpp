#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cenlab/bytes.hpp"
#include "cenlab/rng.hpp"

namespace cenlab {

enum class EnvKind : uint8_t { Spiders = 0, Clusters = 1, Lights = 2 };

enum class EntityKind : uint8_t {
  Agent = 0,
  Spider,
  Gem,
  Box,
  Block,
  Spikes,
  Button,
  Light,
  Wall,
};

enum class Color : uint8_t { None = 0, Blue, Red, Green };
enum class Orientation : uint8_t { North = 0, East, South, West };
enum class AgentAction : uint8_t { Left = 0, Right, Up, Down, Stay };

inline constexpr int kNumActions = 5;
inline constexpr std::array<AgentAction, kNumActions> kAllActions = {
    AgentAction::Left, AgentAction::Right, AgentAction::Up, AgentAction::Down,
    AgentAction::Stay};

struct Entity {
  uint16_t id = 0;
  EntityKind kind = EntityKind::Agent;
  int16_t x = 0;
  int16_t y = 0;
  Color color = Color::None;
  Orientation orientation = Orientation::North;
  bool lit = false;
  bool alive = true;

  bool operator==(const Entity&) const = default;
};

struct GridState {
  EnvKind kind = EnvKind::Spiders;
  int width = 0;
  int height = 0;
  std::vector<Entity> entities;  // index == id, creation order
  CounterRng rng;
  uint32_t step_count = 0;
  bool done = false;

  const Entity& agent() const { return entities[0]; }
  Entity& agent() { return entities[0]; }

  bool operator==(const GridState&) const = default;
};

struct ArenaSize {
  int width, height;
};

inline ArenaSize arena_size(EnvKind k) {
  switch (k) {
    case EnvKind::Spiders: return {6, 6};
    case EnvKind::Clusters: return {13, 10};
    case EnvKind::Lights: return {11, 8};
  }
  throw std::invalid_argument("unknown env kind");
}

inline const char* env_kind_name(EnvKind k) {
  switch (k) {
    case EnvKind::Spiders: return "spiders";
    case EnvKind::Clusters: return "clusters";
    case EnvKind::Lights: return "lights";
  }
  return "?";
}

inline EnvKind parse_env_kind(const std::string& s) {
  if (s == "spiders") return EnvKind::Spiders;
  if (s == "clusters") return EnvKind::Clusters;
  if (s == "lights") return EnvKind::Lights;
  throw std::invalid_argument("unknown env kind: " + s);
}

inline const char* action_name(AgentAction a) {
  switch (a) {
    case AgentAction::Left: return "left";
    case AgentAction::Right: return "right";
    case AgentAction::Up: return "up";
    case AgentAction::Down: return "down";
    case AgentAction::Stay: return "stay";
  }
  return "?";
}

namespace detail {

struct Delta {
  int dx, dy;
};

inline Delta action_delta(AgentAction a) {
  switch (a) {
    case AgentAction::Left: return {-1, 0};
    case AgentAction::Right: return {1, 0};
    case AgentAction::Up: return {0, -1};
    case AgentAction::Down: return {0, 1};
    case AgentAction::Stay: return {0, 0};
  }
  return {0, 0};
}

inline Delta facing_delta(Orientation o) {
  switch (o) {
    case Orientation::North: return {0, -1};
    case Orientation::East: return {1, 0};
    case Orientation::South: return {0, 1};
    case Orientation::West: return {-1, 0};
  }
  return {0, 0};
}

inline Orientation rotate_left(Orientation o) {
  return static_cast<Orientation>((static_cast<int>(o) + 3) % 4);
}
inline Orientation rotate_right(Orientation o) {
  return static_cast<Orientation>((static_cast<int>(o) + 1) % 4);
}

inline bool in_bounds(const GridState& s, int x, int y) {
  return x >= 0 && x < s.width && y >= 0 && y < s.height;
}

inline const Entity* find_at(const GridState& s, int x, int y, EntityKind k) {
  for (const Entity& e : s.entities)
    if (e.alive && e.kind == k && e.x == x && e.y == y) return &e;
  return nullptr;
}

inline Entity* find_at(GridState& s, int x, int y, EntityKind k) {
  return const_cast<Entity*>(find_at(static_cast<const GridState&>(s), x, y, k));
}

inline const Entity* find_kind(const GridState& s, EntityKind k, Color c = Color::None) {
  for (const Entity& e : s.entities)
    if (e.kind == k && (c == Color::None || e.color == c)) return &e;
  return nullptr;
}

struct Cell {
  int x, y;
};

inline int manhattan(Cell a, Cell b) { return std::abs(a.x - b.x) + std::abs(a.y - b.y); }

// Uniform pick from the candidate list; one rng draw, no rejection loop.
inline Cell pick_cell(CounterRng& rng, const std::vector<Cell>& candidates) {
  if (candidates.empty()) throw std::logic_error("no free cell satisfies constraints");
  return candidates[rng.below(static_cast<uint32_t>(candidates.size()))];
}

inline void remove_cell(std::vector<Cell>& cells, Cell c) {
  std::erase_if(cells, [&](Cell o) { return o.x == c.x && o.y == c.y; });
}

inline void add_wall_ring(GridState& s, uint16_t& next_id) {
  for (int x = 0; x < s.width; ++x)
    for (int y = 0; y < s.height; ++y)
      if (x == 0 || y == 0 || x == s.width - 1 || y == s.height - 1)
        s.entities.push_back({next_id++, EntityKind::Wall, static_cast<int16_t>(x),
                              static_cast<int16_t>(y)});
}

}  // namespace detail

// Spiders: 6x6 open field (the boundary blocks movement, no wall tiles),
// one gem, one patrolling spider. Grabbing the gem or touching the spider
// ends the episode.
//
// Clusters: 13x10 walled arena, two blue and two red boxes, one block of
// each color, a fixed spike row. Pushing is sokoban style, no chain pushes.
// Spikes kill the agent and destroy boxes; either ends the episode.
//
// Lights: 11x8 walled arena, a blue and a green button wired to the light
// of the same color (placed at least 4 cells away). Stepping on a button
// turns its light on permanently; all lights lit ends the episode.
inline GridState make_env(EnvKind kind, uint64_t seed) {
  using namespace detail;
  GridState s;
  s.kind = kind;
  ArenaSize a = arena_size(kind);
  s.width = a.width;
  s.height = a.height;
  s.rng = CounterRng(seed);

  auto interior_cells = [&](bool walled) {
    std::vector<Cell> cells;
    int lo = walled ? 1 : 0;
    for (int y = lo; y < s.height - lo; ++y)
      for (int x = lo; x < s.width - lo; ++x) cells.push_back({x, y});
    return cells;
  };

  uint16_t id = 0;
  switch (kind) {
    case EnvKind::Spiders: {
      std::vector<Cell> free = interior_cells(false);
      Cell ac = pick_cell(s.rng, free);
      remove_cell(free, ac);
      Cell gc = pick_cell(s.rng, free);
      remove_cell(free, gc);
      std::vector<Cell> far;
      for (Cell c : free)
        if (manhattan(c, ac) >= 2) far.push_back(c);
      Cell sc = pick_cell(s.rng, far);
      auto ori = static_cast<Orientation>(s.rng.below(4));
      s.entities.push_back({id++, EntityKind::Agent, static_cast<int16_t>(ac.x),
                            static_cast<int16_t>(ac.y)});
      s.entities.push_back({id++, EntityKind::Gem, static_cast<int16_t>(gc.x),
                            static_cast<int16_t>(gc.y)});
      s.entities.push_back({id++, EntityKind::Spider, static_cast<int16_t>(sc.x),
                            static_cast<int16_t>(sc.y), Color::None, ori});
      break;
    }
    case EnvKind::Clusters: {
      std::vector<Cell> spikes;
      for (int x = 4; x <= 8; ++x) spikes.push_back({x, 4});
      std::vector<Cell> free = interior_cells(true);
      for (Cell c : spikes) remove_cell(free, c);

      auto place = [&](EntityKind k, Color col) {
        Cell c = pick_cell(s.rng, free);
        remove_cell(free, c);
        s.entities.push_back({id++, k, static_cast<int16_t>(c.x),
                              static_cast<int16_t>(c.y), col});
      };
      place(EntityKind::Agent, Color::None);
      place(EntityKind::Box, Color::Blue);
      place(EntityKind::Box, Color::Blue);
      place(EntityKind::Box, Color::Red);
      place(EntityKind::Box, Color::Red);
      place(EntityKind::Block, Color::Blue);
      place(EntityKind::Block, Color::Red);
      for (Cell c : spikes)
        s.entities.push_back({id++, EntityKind::Spikes, static_cast<int16_t>(c.x),
                              static_cast<int16_t>(c.y)});
      add_wall_ring(s, id);
      break;
    }
    case EnvKind::Lights: {
      std::vector<Cell> free = interior_cells(true);
      Cell agent_cell{};
      std::array<Cell, 2> buttons{}, lights{};
      const std::array<Color, 2> colors = {Color::Blue, Color::Green};
      for (int i = 0; i < 2; ++i) {
        buttons[i] = pick_cell(s.rng, free);
        remove_cell(free, buttons[i]);
        std::vector<Cell> far;
        for (Cell c : free)
          if (manhattan(c, buttons[i]) >= 4) far.push_back(c);
        lights[i] = pick_cell(s.rng, far);
        remove_cell(free, lights[i]);
      }
      agent_cell = pick_cell(s.rng, free);
      s.entities.push_back({id++, EntityKind::Agent, static_cast<int16_t>(agent_cell.x),
                            static_cast<int16_t>(agent_cell.y)});
      for (int i = 0; i < 2; ++i)
        s.entities.push_back({id++, EntityKind::Button, static_cast<int16_t>(buttons[i].x),
                              static_cast<int16_t>(buttons[i].y), colors[i]});
      for (int i = 0; i < 2; ++i)
        s.entities.push_back({id++, EntityKind::Light, static_cast<int16_t>(lights[i].x),
                              static_cast<int16_t>(lights[i].y), colors[i]});
      add_wall_ring(s, id);
      break;
    }
  }
  return s;
}

namespace detail {

inline void move_to(Entity& e, int x, int y) {
  e.x = static_cast<int16_t>(x);
  e.y = static_cast<int16_t>(y);
}

// Spider motion must be a function of the pre-step world and the rng draw
// only (never of the agent's concurrent move), so counterfactual branches
// that share the rng stream render the spider identically. The agent dies
// if it ends the step on the spider's pre-move or post-move cell: both
// cells then hold the same pixels in every branch (a dead agent is not
// drawn), which keeps spider pixels out of counterfactual masks.
inline void step_spiders(const GridState& prev, GridState& n, AgentAction action) {
  Entity& agent = n.entities[0];
  Entity& gem = n.entities[1];
  Entity& spider = n.entities[2];
  const Entity& gem0 = prev.entities[1];
  const Entity& spider0 = prev.entities[2];

  uint32_t draw = n.rng.below(3);  // 0 turn left, 1 turn right, 2 forward

  Delta d = action_delta(action);
  if (d.dx != 0 || d.dy != 0) {
    int tx = agent.x + d.dx, ty = agent.y + d.dy;
    if (in_bounds(n, tx, ty)) {
      move_to(agent, tx, ty);
      if (gem0.alive && tx == gem0.x && ty == gem0.y) {
        gem.alive = false;
        n.done = true;
      }
    }
  }

  if (draw == 0) {
    spider.orientation = rotate_left(spider.orientation);
  } else if (draw == 1) {
    spider.orientation = rotate_right(spider.orientation);
  } else {
    Delta f = facing_delta(spider0.orientation);
    int tx = spider0.x + f.dx, ty = spider0.y + f.dy;
    bool gem_blocks = gem0.alive && tx == gem0.x && ty == gem0.y;
    if (in_bounds(n, tx, ty) && !gem_blocks) move_to(spider, tx, ty);
  }

  bool on_pre = agent.x == spider0.x && agent.y == spider0.y;
  bool on_post = agent.x == spider.x && agent.y == spider.y;
  if (on_pre || on_post) {
    agent.alive = false;
    n.done = true;
  }
}

inline void step_clusters(GridState& n, AgentAction action) {
  Entity& agent = n.entities[0];
  Delta d = action_delta(action);
  if (d.dx == 0 && d.dy == 0) return;
  int tx = agent.x + d.dx, ty = agent.y + d.dy;

  if (find_at(n, tx, ty, EntityKind::Wall)) return;
  if (Entity* box = find_at(n, tx, ty, EntityKind::Box)) {
    int fx = tx + d.dx, fy = ty + d.dy;
    if (find_at(n, fx, fy, EntityKind::Wall) || find_at(n, fx, fy, EntityKind::Box))
      return;
    move_to(*box, fx, fy);
    move_to(agent, tx, ty);
    if (find_at(n, fx, fy, EntityKind::Spikes)) {
      box->alive = false;
      n.done = true;
    }
    return;
  }
  move_to(agent, tx, ty);
  if (find_at(n, tx, ty, EntityKind::Spikes)) {
    agent.alive = false;
    n.done = true;
  }
}

inline void step_lights(GridState& n, AgentAction action) {
  Entity& agent = n.entities[0];
  Delta d = action_delta(action);
  if (d.dx != 0 || d.dy != 0) {
    int tx = agent.x + d.dx, ty = agent.y + d.dy;
    if (!find_at(n, tx, ty, EntityKind::Wall)) {
      move_to(agent, tx, ty);
      if (const Entity* b = find_at(n, tx, ty, EntityKind::Button)) {
        for (Entity& e : n.entities)
          if (e.kind == EntityKind::Light && e.color == b->color) e.lit = true;
      }
    }
  }
  bool all_lit = true;
  for (const Entity& e : n.entities)
    if (e.kind == EntityKind::Light && !e.lit) all_lit = false;
  n.done = all_lit;
}

}  // namespace detail

inline GridState step(const GridState& s, AgentAction action) {
  if (s.done) throw TerminalStateError("step() on a finished episode");
  GridState n = s;
  n.step_count = s.step_count + 1;
  switch (s.kind) {
    case EnvKind::Spiders: detail::step_spiders(s, n, action); break;
    case EnvKind::Clusters: detail::step_clusters(n, action); break;
    case EnvKind::Lights: detail::step_lights(n, action); break;
  }
  return n;
}

// --- Snapshots ---------------------------------------------------------

inline constexpr uint32_t kSnapshotVersion = 1;

inline std::vector<uint8_t> snapshot(const GridState& s) {
  ByteWriter w;
  w.magic("BLSN");
  w.u32(kSnapshotVersion);
  w.u8(static_cast<uint8_t>(s.kind));
  w.u16(static_cast<uint16_t>(s.width));
  w.u16(static_cast<uint16_t>(s.height));
  w.u64(s.rng.seed());
  w.u64(s.rng.counter());
  w.u32(s.step_count);
  w.u8(s.done ? 1 : 0);
  w.u16(static_cast<uint16_t>(s.entities.size()));
  for (const Entity& e : s.entities) {
    w.u16(e.id);
    w.u8(static_cast<uint8_t>(e.kind));
    w.i16(e.x);
    w.i16(e.y);
    w.u8(static_cast<uint8_t>(e.color));
    w.u8(static_cast<uint8_t>(e.orientation));
    w.u8(e.lit ? 1 : 0);
    w.u8(e.alive ? 1 : 0);
  }
  return w.take();
}

inline GridState restore(const std::vector<uint8_t>& bytes) {
  ByteReader r(bytes);
  r.expect_magic("BLSN");
  uint32_t version = r.u32();
  if (version != kSnapshotVersion)
    throw FormatError("unsupported snapshot version " + std::to_string(version));
  GridState s;
  uint8_t kind = r.u8();
  if (kind > 2) throw FormatError("bad env kind " + std::to_string(kind));
  s.kind = static_cast<EnvKind>(kind);
  s.width = r.u16();
  s.height = r.u16();
  ArenaSize a = arena_size(s.kind);
  if (s.width != a.width || s.height != a.height)
    throw FormatError("arena size mismatch for env kind");
  uint64_t seed = r.u64();
  uint64_t counter = r.u64();
  s.rng.set_state(seed, counter);
  s.step_count = r.u32();
  s.done = r.u8() != 0;
  uint16_t count = r.u16();
  s.entities.reserve(count);
  for (int i = 0; i < count; ++i) {
    Entity e;
    e.id = r.u16();
    uint8_t ek = r.u8();
    if (ek > static_cast<uint8_t>(EntityKind::Wall))
      throw FormatError("bad entity kind " + std::to_string(ek));
    e.kind = static_cast<EntityKind>(ek);
    e.x = r.i16();
    e.y = r.i16();
    if (e.x < 0 || e.x >= s.width || e.y < 0 || e.y >= s.height)
      throw FormatError("entity out of bounds");
    uint8_t col = r.u8();
    if (col > static_cast<uint8_t>(Color::Green)) throw FormatError("bad color");
    e.color = static_cast<Color>(col);
    uint8_t ori = r.u8();
    if (ori > static_cast<uint8_t>(Orientation::West)) throw FormatError("bad orientation");
    e.orientation = static_cast<Orientation>(ori);
    e.lit = r.u8() != 0;
    e.alive = r.u8() != 0;
    s.entities.push_back(e);
  }
  if (s.entities.empty() || s.entities[0].kind != EntityKind::Agent)
    throw FormatError("snapshot has no agent at id 0");
  if (!r.done()) throw FormatError("trailing bytes after snapshot");
  return s;
}

// --- Attributes --------------------------------------------------------

enum class AttrGroup : uint8_t { Agent = 0, Spider, Box, Button, Light };

struct AttributeSchema {
  std::vector<std::string> names;
  std::vector<AttrGroup> groups;
  size_t size() const { return names.size(); }
};

inline const AttributeSchema& attribute_schema(EnvKind kind) {
  static const AttributeSchema spiders{
      {"agent.x", "agent.y", "spider.x", "spider.y"},
      {AttrGroup::Agent, AttrGroup::Agent, AttrGroup::Spider, AttrGroup::Spider}};
  static const AttributeSchema clusters{
      {"agent.x", "agent.y", "box1.x", "box1.y", "box2.x", "box2.y", "box3.x",
       "box3.y", "box4.x", "box4.y"},
      {AttrGroup::Agent, AttrGroup::Agent, AttrGroup::Box, AttrGroup::Box,
       AttrGroup::Box, AttrGroup::Box, AttrGroup::Box, AttrGroup::Box,
       AttrGroup::Box, AttrGroup::Box}};
  static const AttributeSchema lights{
      {"agent.x", "agent.y", "button.blue.pressed", "button.green.pressed",
       "light.blue.lit", "light.green.lit"},
      {AttrGroup::Agent, AttrGroup::Agent, AttrGroup::Button, AttrGroup::Button,
       AttrGroup::Light, AttrGroup::Light}};
  switch (kind) {
    case EnvKind::Spiders: return spiders;
    case EnvKind::Clusters: return clusters;
    case EnvKind::Lights: return lights;
  }
  throw std::invalid_argument("unknown env kind");
}

inline std::vector<int> attribute_values(const GridState& s) {
  const Entity& a = s.entities[0];
  std::vector<int> v;
  switch (s.kind) {
    case EnvKind::Spiders: {
      const Entity& sp = s.entities[2];
      v = {a.x, a.y, sp.x, sp.y};
      break;
    }
    case EnvKind::Clusters: {
      v = {a.x, a.y};
      for (int i = 1; i <= 4; ++i) {
        v.push_back(s.entities[i].x);
        v.push_back(s.entities[i].y);
      }
      break;
    }
    case EnvKind::Lights: {
      v = {a.x, a.y};
      for (int i = 1; i <= 2; ++i) {
        const Entity& b = s.entities[i];
        v.push_back(a.alive && a.x == b.x && a.y == b.y ? 1 : 0);
      }
      for (int i = 3; i <= 4; ++i) v.push_back(s.entities[i].lit ? 1 : 0);
      break;
    }
  }
  return v;
}

struct AttributeVector {
  const AttributeSchema* schema;
  std::vector<int> values;
};

inline AttributeVector attribute_vector(const GridState& s) {
  return {&attribute_schema(s.kind), attribute_values(s)};
}

}  // namespace cenlab
