#pragma once

#include "tscdreamer/sim/corridor.hpp"

#include <algorithm>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace tscdreamer::sim {

struct DemandProfile {
  // Flows ramp linearly from zero to nominal over the warm-up, then hold.
  int warmup_s = 1800;

  double factor(std::int64_t t) const {
    if (warmup_s <= 0) return 1.0;
    if (t <= 0) return 0.0;
    if (t >= warmup_s) return 1.0;
    return static_cast<double>(t) / static_cast<double>(warmup_s);
  }
};

struct Arrival {
  int origin = 0;
  Vehicle vehicle;
};

/// Immutable description of one corridor: geometry, signal plan, saturation
/// rates, demand, and the route table derived from the OD matrix.
class Corridor {
 public:
  Corridor(CorridorGeometry geometry, SignalTiming timing, std::vector<int> offsets, Saturation saturation, ODMatrix od,
           DemandProfile profile)
      : geometry_(std::move(geometry)),
        timing_(timing),
        offsets_(std::move(offsets)),
        saturation_(saturation),
        od_(std::move(od)),
        profile_(profile) {
    const int m = geometry_.intersections();
    if (offsets_.empty()) offsets_.assign(static_cast<std::size_t>(m), 0);
    if (static_cast<int>(offsets_.size()) != m) throw std::invalid_argument("one offset per intersection required");
    if (od_.zones() != geometry_.zone_count()) throw std::invalid_argument("OD matrix size does not match corridor zones");
    if (saturation_.straight.vehicles <= 0 || saturation_.straight.seconds <= 0 || saturation_.turn.vehicles <= 0 ||
        saturation_.turn.seconds <= 0)
      throw std::invalid_argument("saturation rates must be positive");
    // Validates the timing plan once.
    SignalController probe(0, timing_, 0);
    (void)probe;
    for (int o = 0; o < od_.zones(); ++o)
      for (int d = 0; d < od_.zones(); ++d)
        if (od_.flow(o, d) > 0.0) {
          routes_.push_back(geometry_.route(o, d));
          route_flow_.push_back(od_.flow(o, d));
        }
  }

  const CorridorGeometry& geometry() const { return geometry_; }
  const SignalTiming& timing() const { return timing_; }
  const Saturation& saturation() const { return saturation_; }
  const ODMatrix& od() const { return od_; }
  const DemandProfile& profile() const { return profile_; }
  const std::vector<Route>& routes() const { return routes_; }

  SimState initial_state(std::uint64_t seed) const {
    SimState s;
    s.time = 0;
    s.links.resize(geometry_.links().size());
    for (int x = 0; x < geometry_.intersections(); ++x)
      s.controllers.emplace_back(x, timing_, offsets_[static_cast<std::size_t>(x)]);
    s.origin_backlog.resize(static_cast<std::size_t>(geometry_.zone_count()));
    s.rng.seed(seed);
    return s;
  }

  /// Expected number of vehicles generated over [t, t+dt) for one route.
  double expected_arrivals(std::size_t route, std::int64_t t, int dt = 1) const {
    return route_flow_.at(route) / 3600.0 * profile_.factor(t) * dt;
  }

  double expected_total_arrivals(std::int64_t t, int dt = 1) const {
    double s = 0.0;
    for (std::size_t r = 0; r < routes_.size(); ++r) s += expected_arrivals(r, t, dt);
    return s;
  }

  /// Poisson arrivals for every route over one tick, in route order.
  template <class Rng>
  std::vector<Arrival> inject_demand(std::int64_t t, int dt, Rng& rng) const {
    std::vector<Arrival> out;
    for (std::size_t r = 0; r < routes_.size(); ++r) {
      double mean = expected_arrivals(r, t, dt);
      if (mean <= 0.0) continue;
      std::poisson_distribution<int> pois(mean);
      int n = pois(rng);
      for (int k = 0; k < n; ++k) out.push_back({routes_[r].origin, Vehicle{static_cast<std::uint32_t>(r), 0}});
    }
    return out;
  }

  /// Unclipped number of vehicles queued in the straight movement of a link.
  int queue_length(const SimState& s, int link) const {
    geometry_.link(link);
    return static_cast<int>(s.links[static_cast<std::size_t>(link)].queue(Movement::kStraight));
  }

  std::vector<int> main_line_queues(const SimState& s) const {
    std::vector<int> q;
    for (int l = 0; l < geometry_.main_link_count(); ++l) q.push_back(queue_length(s, l));
    return q;
  }

  void set_split(SimState& s, int intersection, int split) const {
    s.controllers.at(static_cast<std::size_t>(intersection)).set_split(split);
  }

  /// One simulation second: inject demand, release arrivals into movement
  /// queues, discharge green movements subject to downstream storage, then
  /// advance the clock.
  void tick(SimState& s) const {
    const std::int64_t t = s.time;

    for (const Arrival& a : inject_demand(t, 1, s.rng)) {
      s.origin_backlog[static_cast<std::size_t>(a.origin)].push_back(a.vehicle);
      ++s.entered;
    }
    for (auto& backlog : s.origin_backlog) {
      while (!backlog.empty()) {
        const Vehicle v = backlog.front();
        const int first = routes_[v.route].hops[0].link;
        LinkState& ls = s.links[static_cast<std::size_t>(first)];
        const Link& l = geometry_.link(first);
        if (ls.occupancy() >= static_cast<std::size_t>(l.params.storage_capacity)) break;
        ls.in_transit.push_back({t + l.params.free_flow_time_s, v});
        backlog.pop_front();
      }
    }

    for (std::size_t li = 0; li < s.links.size(); ++li) {
      LinkState& ls = s.links[li];
      const Link& l = geometry_.links()[li];
      while (!ls.in_transit.empty() && ls.in_transit.front().arrival_time <= t) {
        const Vehicle v = ls.in_transit.front().vehicle;
        ls.in_transit.pop_front();
        if (l.downstream < 0) {
          ++s.exited;
        } else {
          const Hop& hop = routes_[v.route].hops[v.hop];
          ls.queues[static_cast<std::size_t>(hop.movement)].push_back(v);
        }
      }
    }

    for (auto& c : s.controllers) c.latch(t);

    for (std::size_t li = 0; li < s.links.size(); ++li) {
      const Link& l = geometry_.links()[li];
      if (l.downstream < 0) continue;
      const GreenSet green = s.controllers[static_cast<std::size_t>(l.downstream)].green_movements(t);
      for (Movement mv : {Movement::kLeft, Movement::kStraight, Movement::kRight})
        if (green.permits(l.main_line, mv)) discharge(s, static_cast<int>(li), mv, t);
    }

    s.time = t + 1;
    if (s.entered != s.exited + s.on_network())
      throw std::logic_error("vehicle conservation violated at t=" + std::to_string(t));
  }

  void run_interval(SimState& s, int seconds) const {
    if (seconds < 0) throw std::invalid_argument("run_interval: negative duration");
    for (int i = 0; i < seconds; ++i) tick(s);
  }

  const Rate& rate(Movement mv) const { return mv == Movement::kStraight ? saturation_.straight : saturation_.turn; }

 private:
  void discharge(SimState& s, int link, Movement mv, std::int64_t t) const {
    LinkState& ls = s.links[static_cast<std::size_t>(link)];
    auto& queue = ls.queues[static_cast<std::size_t>(mv)];
    std::int64_t& credit = ls.credit[static_cast<std::size_t>(mv)];
    if (queue.empty()) {
      credit = 0;
      return;
    }
    const Rate& r = rate(mv);
    credit += r.vehicles;
    while (credit >= r.seconds && !queue.empty()) {
      Vehicle v = queue.front();
      const Route& route = routes_[v.route];
      if (static_cast<std::size_t>(v.hop) + 1 == route.hops.size()) {
        // Turning into a side zone or crossing to the opposite one.
        queue.pop_front();
        ++s.exited;
      } else {
        const int next = route.hops[static_cast<std::size_t>(v.hop) + 1].link;
        LinkState& ns = s.links[static_cast<std::size_t>(next)];
        const Link& nl = geometry_.link(next);
        if (ns.occupancy() >= static_cast<std::size_t>(nl.params.storage_capacity)) {
          // Spillback: hold at most one vehicle's worth of credit.
          credit = std::min(credit, r.seconds);
          return;
        }
        queue.pop_front();
        ++v.hop;
        ns.in_transit.push_back({t + nl.params.free_flow_time_s, v});
      }
      credit -= r.seconds;
    }
    if (queue.empty()) credit = 0;
  }

  CorridorGeometry geometry_;
  SignalTiming timing_;
  std::vector<int> offsets_;
  Saturation saturation_;
  ODMatrix od_;
  DemandProfile profile_;
  std::vector<Route> routes_;
  std::vector<double> route_flow_;
};

}  // namespace tscdreamer::sim
