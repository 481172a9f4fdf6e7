#pragma once

// Scenario configuration (JSON) and corridor construction.

#include "tscdreamer/sim/simulator.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tscdreamer::sim {

struct DemandConfig {
  double west_east = 1800.0;        // veh/h, W → E
  double east_west = 600.0;         // veh/h, E → W
  double terminal_to_side = 100.0;  // veh/h, each terminal to each side zone
  double side_to_terminal = 100.0;  // veh/h, each side zone to each terminal
  int warmup_s = 1800;
};

struct ScenarioConfig {
  std::string name = "scenario1";
  // 1: west→east dominant, east-west links carry zero reward weight.
  // 2: balanced directions, every main-line link weighted.
  int pattern = 1;
  int intersections = 5;
  LinkParams link;
  SignalTiming signal;
  std::vector<int> offsets;  // empty → all zero
  Saturation saturation;
  DemandConfig demand;
  std::uint64_t seed = 1;
};

/// Defaults for the two demand patterns. Flows are tuned so that the
/// fixed-split base case congests the dominant direction while a split
/// policy inside [30, 70] can still serve it.
inline ScenarioConfig default_scenario(int pattern, int intersections = 5) {
  ScenarioConfig c;
  c.pattern = pattern;
  c.intersections = intersections;
  c.name = "scenario" + std::to_string(pattern);
  if (pattern == 1) {
    c.demand.west_east = 1500.0;
    c.demand.east_west = 500.0;
  } else if (pattern == 2) {
    c.demand.west_east = 1200.0;
    c.demand.east_west = 1200.0;
  } else {
    throw std::invalid_argument("scenario pattern must be 1 or 2");
  }
  c.demand.terminal_to_side = 50.0;
  c.demand.side_to_terminal = 50.0;
  return c;
}

inline void validate(const ScenarioConfig& c) {
  if (c.pattern != 1 && c.pattern != 2) throw std::invalid_argument("scenario pattern must be 1 or 2");
  if (c.intersections < 2) throw std::invalid_argument("scenario needs at least 2 intersections");
  const DemandConfig& d = c.demand;
  for (double f : {d.west_east, d.east_west, d.terminal_to_side, d.side_to_terminal})
    if (!(f >= 0.0)) throw std::invalid_argument("scenario flows must be non-negative");
  if (c.pattern == 2 && d.west_east != d.east_west)
    throw std::invalid_argument("pattern 2 requires equal west-east and east-west flows");
  if (d.warmup_s < 0) throw std::invalid_argument("warm-up must be non-negative");
}

inline ODMatrix build_od(const ScenarioConfig& c) {
  CorridorGeometry g(c.intersections, c.link);
  ODMatrix od(g.zone_count());
  od.set_flow(kWestZone, kEastZone, c.demand.west_east);
  od.set_flow(kEastZone, kWestZone, c.demand.east_west);
  for (int m = 0; m < c.intersections; ++m)
    for (int side : {north_zone(m), south_zone(m)})
      for (int term : {kWestZone, kEastZone}) {
        od.set_flow(term, side, c.demand.terminal_to_side);
        od.set_flow(side, term, c.demand.side_to_terminal);
      }
  return od;
}

inline Corridor build_corridor(const ScenarioConfig& c) {
  validate(c);
  return Corridor(CorridorGeometry(c.intersections, c.link), c.signal, c.offsets, c.saturation, build_od(c),
                  DemandProfile{c.demand.warmup_s});
}

inline nlohmann::json to_json(const ScenarioConfig& c) {
  return {
      {"name", c.name},
      {"pattern", c.pattern},
      {"intersections", c.intersections},
      {"link", {{"length_m", c.link.length_m}, {"free_flow_time_s", c.link.free_flow_time_s}, {"storage_capacity", c.link.storage_capacity}}},
      {"signal",
       {{"cycle_s", c.signal.cycle_s},
        {"left_green_s", c.signal.left_green_s},
        {"yellow_s", c.signal.yellow_s},
        {"all_red_s", c.signal.all_red_s},
        {"split_min_s", c.signal.split_min_s},
        {"split_max_s", c.signal.split_max_s},
        {"initial_split_s", c.signal.initial_split_s},
        {"offsets_s", c.offsets}}},
      {"saturation",
       {{"straight_vehicles", c.saturation.straight.vehicles},
        {"straight_seconds", c.saturation.straight.seconds},
        {"turn_vehicles", c.saturation.turn.vehicles},
        {"turn_seconds", c.saturation.turn.seconds}}},
      {"demand",
       {{"west_east_vph", c.demand.west_east},
        {"east_west_vph", c.demand.east_west},
        {"terminal_to_side_vph", c.demand.terminal_to_side},
        {"side_to_terminal_vph", c.demand.side_to_terminal},
        {"warmup_s", c.demand.warmup_s}}},
      {"seed", c.seed},
  };
}

/// Missing keys keep the pattern defaults.
inline ScenarioConfig scenario_from_json(const nlohmann::json& j) {
  const int pattern = j.value("pattern", 1);
  ScenarioConfig c = default_scenario(pattern, j.value("intersections", 5));
  c.name = j.value("name", c.name);
  if (j.contains("link")) {
    const auto& l = j.at("link");
    c.link.length_m = l.value("length_m", c.link.length_m);
    c.link.free_flow_time_s = l.value("free_flow_time_s", c.link.free_flow_time_s);
    c.link.storage_capacity = l.value("storage_capacity", c.link.storage_capacity);
  }
  if (j.contains("signal")) {
    const auto& s = j.at("signal");
    c.signal.cycle_s = s.value("cycle_s", c.signal.cycle_s);
    c.signal.left_green_s = s.value("left_green_s", c.signal.left_green_s);
    c.signal.yellow_s = s.value("yellow_s", c.signal.yellow_s);
    c.signal.all_red_s = s.value("all_red_s", c.signal.all_red_s);
    c.signal.split_min_s = s.value("split_min_s", c.signal.split_min_s);
    c.signal.split_max_s = s.value("split_max_s", c.signal.split_max_s);
    c.signal.initial_split_s = s.value("initial_split_s", c.signal.initial_split_s);
    c.offsets = s.value("offsets_s", c.offsets);
  }
  if (j.contains("saturation")) {
    const auto& s = j.at("saturation");
    c.saturation.straight.vehicles = s.value("straight_vehicles", c.saturation.straight.vehicles);
    c.saturation.straight.seconds = s.value("straight_seconds", c.saturation.straight.seconds);
    c.saturation.turn.vehicles = s.value("turn_vehicles", c.saturation.turn.vehicles);
    c.saturation.turn.seconds = s.value("turn_seconds", c.saturation.turn.seconds);
  }
  if (j.contains("demand")) {
    const auto& d = j.at("demand");
    c.demand.west_east = d.value("west_east_vph", c.demand.west_east);
    c.demand.east_west = d.value("east_west_vph", c.demand.east_west);
    c.demand.terminal_to_side = d.value("terminal_to_side_vph", c.demand.terminal_to_side);
    c.demand.side_to_terminal = d.value("side_to_terminal_vph", c.demand.side_to_terminal);
    c.demand.warmup_s = d.value("warmup_s", c.demand.warmup_s);
  }
  c.seed = j.value("seed", c.seed);
  validate(c);
  return c;
}

inline ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario file " + path);
  return scenario_from_json(nlohmann::json::parse(in));
}

}  // namespace tscdreamer::sim
