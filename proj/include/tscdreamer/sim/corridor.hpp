#pragma once

// Store-and-forward (point-queue) simulator of a signalized arterial corridor.
//
// Geometry, for M intersections numbered west to east:
//   eastbound main links  e_0..e_M : e_i runs from position i−1 to i
//   westbound main links  w_0..w_M : w_j runs from position M−j to M−1−j
//   side approaches       from N_m (southbound) and from S_m (northbound)
// Position −1 is the W terminal zone and position M the E terminal zone.
// Link ids: e_i → i, w_j → M+1+j, southbound approach of m → 2(M+1)+2m,
// northbound approach of m → 2(M+1)+2m+1.

#include <array>
#include <cstdint>
#include <deque>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace tscdreamer::sim {

enum class Movement : std::uint8_t { kLeft = 0, kStraight = 1, kRight = 2 };
enum class Heading : std::uint8_t { kEast, kWest, kSouth, kNorth };

inline constexpr int kWestZone = 0;
inline constexpr int kEastZone = 1;
inline int north_zone(int m) { return 2 + 2 * m; }
inline int south_zone(int m) { return 3 + 2 * m; }

/// Exact vehicles-per-second rate, `vehicles` every `seconds`.
struct Rate {
  std::int64_t vehicles = 1;
  std::int64_t seconds = 1;
  double per_second() const { return static_cast<double>(vehicles) / static_cast<double>(seconds); }
  friend bool operator==(const Rate&, const Rate&) = default;
};

struct LinkParams {
  double length_m = 500.0;
  int free_flow_time_s = 36;
  int storage_capacity = 200;  // 3 lanes × 500 m / 7.5 m
  friend bool operator==(const LinkParams&, const LinkParams&) = default;
};

struct SignalTiming {
  int cycle_s = 100;
  int left_green_s = 8;
  int yellow_s = 2;
  int all_red_s = 2;
  int split_min_s = 30;
  int split_max_s = 70;
  int initial_split_s = 50;

  int green_budget() const { return cycle_s - 4 * (yellow_s + all_red_s); }
  int clearance() const { return yellow_s + all_red_s; }
  friend bool operator==(const SignalTiming&, const SignalTiming&) = default;
};

struct Saturation {
  // Whole straight approach (both straight lanes): 50 vehicles in the 42 s
  // north–south straight green of a 50 s split.
  Rate straight{50, 42};
  Rate turn{1, 2};  // per turn lane
};

struct Link {
  int id = 0;
  Heading heading = Heading::kEast;
  bool main_line = true;
  int upstream = 0;    // position (−1 / M are the terminal zones); side links: intersection index
  int downstream = 0;  // intersection index, or −1 when the link ends in a zone
  int exit_zone = -1;  // zone reached at the downstream end, if any
  LinkParams params;
};

struct Hop {
  int link = 0;
  Movement movement = Movement::kStraight;
};

struct Route {
  int origin = 0;
  int destination = 0;
  std::vector<Hop> hops;
  // True when the vehicle leaves the network when discharged from the last
  // hop's queue (turning into a side zone); false when the last link ends
  // in a terminal zone and the vehicle exits on arrival.
  bool exits_at_intersection = false;
};

class CorridorGeometry {
 public:
  CorridorGeometry(int intersections, LinkParams params) : m_(intersections) {
    if (intersections < 2) throw std::invalid_argument("corridor needs at least 2 intersections");
    if (params.free_flow_time_s < 1 || params.storage_capacity < 1 || !(params.length_m > 0.0))
      throw std::invalid_argument("invalid link parameters");
    for (int i = 0; i <= m_; ++i) {
      Link l;
      l.id = i;
      l.heading = Heading::kEast;
      l.upstream = i - 1;
      l.downstream = i < m_ ? i : -1;
      l.exit_zone = i < m_ ? -1 : kEastZone;
      l.params = params;
      links_.push_back(l);
    }
    for (int j = 0; j <= m_; ++j) {
      Link l;
      l.id = m_ + 1 + j;
      l.heading = Heading::kWest;
      l.upstream = m_ - j;
      int down = m_ - 1 - j;
      l.downstream = down >= 0 ? down : -1;
      l.exit_zone = down >= 0 ? -1 : kWestZone;
      l.params = params;
      links_.push_back(l);
    }
    for (int x = 0; x < m_; ++x) {
      for (Heading h : {Heading::kSouth, Heading::kNorth}) {
        Link l;
        l.id = static_cast<int>(links_.size());
        l.heading = h;
        l.main_line = false;
        l.upstream = x;
        l.downstream = x;
        l.params = params;
        links_.push_back(l);
      }
    }
  }

  int intersections() const { return m_; }
  int main_link_count() const { return 2 * (m_ + 1); }
  int zone_count() const { return 2 + 2 * m_; }
  const std::vector<Link>& links() const { return links_; }
  const Link& link(int id) const {
    if (id < 0 || id >= static_cast<int>(links_.size())) throw std::out_of_range("unknown link " + std::to_string(id));
    return links_[static_cast<std::size_t>(id)];
  }

  int eastbound(int i) const { return i; }
  int westbound(int j) const { return m_ + 1 + j; }
  int southbound_approach(int x) const { return 2 * (m_ + 1) + 2 * x; }
  int northbound_approach(int x) const { return 2 * (m_ + 1) + 2 * x + 1; }
  /// Main-line link leaving intersection x eastward / westward.
  int east_out(int x) const { return eastbound(x + 1); }
  int west_out(int x) const { return westbound(m_ - x); }
  /// Main-line links arriving at intersection x.
  int east_in(int x) const { return eastbound(x); }
  int west_in(int x) const { return westbound(m_ - 1 - x); }

  std::string zone_name(int z) const {
    if (z == kWestZone) return "W";
    if (z == kEastZone) return "E";
    return (z % 2 == 0 ? "N" : "S") + std::to_string((z - 2) / 2);
  }

  /// Static route for an OD pair: main-line traffic goes straight, side
  /// traffic turns once onto or off the main line.
  Route route(int origin, int destination) const {
    if (origin == destination) throw std::invalid_argument("route: origin equals destination");
    check_zone(origin);
    check_zone(destination);
    Route r;
    r.origin = origin;
    r.destination = destination;
    int cur;
    if (origin == kWestZone)
      cur = eastbound(0);
    else if (origin == kEastZone)
      cur = westbound(0);
    else if (origin % 2 == 0)
      cur = southbound_approach((origin - 2) / 2);
    else
      cur = northbound_approach((origin - 3) / 2);

    auto side_index = [](int z) { return (z - 2) / 2; };
    auto is_side = [](int z) { return z >= 2; };

    for (int guard = 0; guard < 4 * m_ + 4; ++guard) {
      const Link& l = link(cur);
      if (l.downstream < 0) {
        if (l.exit_zone != destination) throw std::invalid_argument("route: destination unreachable");
        r.hops.push_back({cur, Movement::kStraight});
        return r;
      }
      const int x = l.downstream;
      const bool dest_here = is_side(destination) && side_index(destination) == x;
      const bool dest_east = destination == kEastZone || (is_side(destination) && side_index(destination) > x);
      const bool dest_west = destination == kWestZone || (is_side(destination) && side_index(destination) < x);
      switch (l.heading) {
        case Heading::kEast:
          if (dest_here) {
            r.hops.push_back({cur, destination == north_zone(x) ? Movement::kLeft : Movement::kRight});
            r.exits_at_intersection = true;
            return r;
          }
          if (!dest_east) throw std::invalid_argument("route: U-turns are not modelled");
          r.hops.push_back({cur, Movement::kStraight});
          cur = east_out(x);
          break;
        case Heading::kWest:
          if (dest_here) {
            r.hops.push_back({cur, destination == south_zone(x) ? Movement::kLeft : Movement::kRight});
            r.exits_at_intersection = true;
            return r;
          }
          if (!dest_west) throw std::invalid_argument("route: U-turns are not modelled");
          r.hops.push_back({cur, Movement::kStraight});
          cur = west_out(x);
          break;
        case Heading::kSouth:
          if (dest_here) {
            if (destination != south_zone(x)) throw std::invalid_argument("route: U-turns are not modelled");
            r.hops.push_back({cur, Movement::kStraight});
            r.exits_at_intersection = true;
            return r;
          }
          // Southbound: left turns east, right turns west.
          r.hops.push_back({cur, dest_east ? Movement::kLeft : Movement::kRight});
          cur = dest_east ? east_out(x) : west_out(x);
          break;
        case Heading::kNorth:
          if (dest_here) {
            if (destination != north_zone(x)) throw std::invalid_argument("route: U-turns are not modelled");
            r.hops.push_back({cur, Movement::kStraight});
            r.exits_at_intersection = true;
            return r;
          }
          r.hops.push_back({cur, dest_east ? Movement::kRight : Movement::kLeft});
          cur = dest_east ? east_out(x) : west_out(x);
          break;
      }
    }
    throw std::logic_error("route: construction did not terminate");
  }

 private:
  void check_zone(int z) const {
    if (z < 0 || z >= zone_count()) throw std::out_of_range("unknown zone " + std::to_string(z));
  }

  int m_;
  std::vector<Link> links_;
};

/// Movements with right of way at one instant.
struct GreenSet {
  bool side_straight_right = false;  // P1
  bool side_left = false;            // P2
  bool main_straight_right = false;  // P3
  bool main_left = false;            // P4

  bool empty() const { return !(side_straight_right || side_left || main_straight_right || main_left); }
  bool permits(bool main_line, Movement mv) const {
    if (main_line) return mv == Movement::kLeft ? main_left : main_straight_right;
    return mv == Movement::kLeft ? side_left : side_straight_right;
  }
  friend bool operator==(const GreenSet&, const GreenSet&) = default;
};

struct PhaseGreens {
  int p1 = 0;  // north–south straight/right
  int p2 = 0;  // north–south left
  int p3 = 0;  // east–west straight/right
  int p4 = 0;  // east–west left
};

/// Four-phase fixed-cycle controller. Each phase is followed by yellow and
/// all-red; the split is the north–south share p1 + p2 of the green budget.
class SignalController {
 public:
  SignalController() = default;
  SignalController(int id, SignalTiming timing, int offset_s = 0)
      : id_(id), timing_(timing), offset_(offset_s), split_(timing.initial_split_s), active_split_(timing.initial_split_s) {
    validate(split_);
    if (greens(timing_.split_min_s).p1 <= 0 || greens(timing_.split_max_s).p3 <= 0)
      throw std::invalid_argument("signal timing leaves a phase without green");
  }

  int id() const { return id_; }
  const SignalTiming& timing() const { return timing_; }
  int offset() const { return offset_; }
  int split() const { return split_; }
  int active_split() const { return active_split_; }

  PhaseGreens greens(int split) const {
    PhaseGreens g;
    g.p1 = split - timing_.left_green_s;
    g.p2 = timing_.left_green_s;
    g.p4 = timing_.left_green_s;
    g.p3 = timing_.green_budget() - split - timing_.left_green_s;
    return g;
  }
  PhaseGreens greens() const { return greens(split_); }

  /// Requests a new split; it takes effect at the next cycle boundary.
  void set_split(int split) {
    validate(split);
    split_ = split;
  }

  int local_time(std::int64_t t) const {
    std::int64_t c = timing_.cycle_s;
    return static_cast<int>(((t - offset_) % c + c) % c);
  }

  /// Called once per tick before discharge.
  void latch(std::int64_t t) {
    if (local_time(t) == 0) active_split_ = split_;
  }

  GreenSet green_movements(std::int64_t t) const {
    const PhaseGreens g = greens(active_split_);
    const int clr = timing_.clearance();
    int tau = local_time(t);
    GreenSet s;
    int start = 0;
    if (tau < start + g.p1) s.side_straight_right = true;
    start += g.p1 + clr;
    if (tau >= start && tau < start + g.p2) s.side_left = true;
    start += g.p2 + clr;
    if (tau >= start && tau < start + g.p3) s.main_straight_right = true;
    start += g.p3 + clr;
    if (tau >= start && tau < start + g.p4) s.main_left = true;
    return s;
  }

  friend bool operator==(const SignalController&, const SignalController&) = default;

 private:
  void validate(int split) const {
    if (split < timing_.split_min_s || split > timing_.split_max_s)
      throw std::out_of_range("split " + std::to_string(split) + " s outside [" + std::to_string(timing_.split_min_s) +
                              ", " + std::to_string(timing_.split_max_s) + "]");
  }

  int id_ = 0;
  SignalTiming timing_;
  int offset_ = 0;
  int split_ = 50;
  int active_split_ = 50;
};

/// Zone-to-zone flows in vehicles per hour.
class ODMatrix {
 public:
  explicit ODMatrix(int zones) : zones_(zones), flows_(static_cast<std::size_t>(zones * zones), 0.0) {}

  int zones() const { return zones_; }
  double flow(int o, int d) const { return flows_[index(o, d)]; }
  void set_flow(int o, int d, double veh_per_hour) {
    if (!(veh_per_hour >= 0.0)) throw std::invalid_argument("OD flows must be non-negative");
    if (o == d && veh_per_hour > 0.0) throw std::invalid_argument("OD flow from a zone to itself");
    flows_[index(o, d)] = veh_per_hour;
  }
  double total() const {
    double s = 0.0;
    for (double f : flows_) s += f;
    return s;
  }

 private:
  std::size_t index(int o, int d) const {
    if (o < 0 || d < 0 || o >= zones_ || d >= zones_) throw std::out_of_range("OD index");
    return static_cast<std::size_t>(o * zones_ + d);
  }
  int zones_;
  std::vector<double> flows_;
};

struct Vehicle {
  std::uint32_t route = 0;
  std::uint16_t hop = 0;
  friend bool operator==(const Vehicle&, const Vehicle&) = default;
};

struct InTransit {
  std::int64_t arrival_time = 0;
  Vehicle vehicle;
  friend bool operator==(const InTransit&, const InTransit&) = default;
};

struct LinkState {
  std::array<std::deque<Vehicle>, 3> queues;  // indexed by Movement
  std::deque<InTransit> in_transit;            // FIFO, arrival times non-decreasing
  std::array<std::int64_t, 3> credit{};        // discharge accumulator in rate units

  std::size_t queue(Movement m) const { return queues[static_cast<std::size_t>(m)].size(); }
  std::size_t occupancy() const { return queues[0].size() + queues[1].size() + queues[2].size() + in_transit.size(); }
  friend bool operator==(const LinkState&, const LinkState&) = default;
};

struct SimState {
  std::int64_t time = 0;
  std::vector<LinkState> links;
  std::vector<SignalController> controllers;
  std::vector<std::deque<Vehicle>> origin_backlog;  // per zone, waiting for space on the first link
  std::uint64_t entered = 0;
  std::uint64_t exited = 0;
  std::mt19937_64 rng;

  std::uint64_t on_network() const {
    std::uint64_t n = 0;
    for (const auto& l : links) n += l.occupancy();
    for (const auto& b : origin_backlog) n += b.size();
    return n;
  }
  friend bool operator==(const SimState&, const SimState&) = default;
};

}  // namespace tscdreamer::sim
