#include "niva/scenario_io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <stdexcept>

#include "niva/latent.hpp"
#include "niva/rng.hpp"

namespace niva {

namespace {

using nlohmann::json;

void append_double(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

void append_agent(std::string& out, const AgentState& a) {
  out += "{\"x\":";
  append_double(out, a.x);
  out += ",\"y\":";
  append_double(out, a.y);
  out += ",\"heading\":";
  append_double(out, a.heading);
  out += ",\"speed\":";
  append_double(out, a.speed);
  out += ",\"kind\":\"";
  out += to_string(a.kind);
  out += "\",\"valid\":";
  out += a.valid ? "true" : "false";
  out += "}";
}

void append_steps(std::string& out, const std::vector<std::vector<AgentState>>& steps) {
  out += "[";
  for (std::size_t t = 0; t < steps.size(); ++t) {
    if (t) out += ",";
    out += "[";
    for (std::size_t n = 0; n < steps[t].size(); ++n) {
      if (n) out += ",";
      append_agent(out, steps[t][n]);
    }
    out += "]";
  }
  out += "]";
}

void append_map(std::string& out, const std::vector<MapFeature>& map) {
  out += "[";
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (i) out += ",";
    out += "{\"points\":[";
    for (std::size_t p = 0; p < map[i].points.size(); ++p) {
      if (p) out += ",";
      out += "[";
      append_double(out, map[i].points[p][0]);
      out += ",";
      append_double(out, map[i].points[p][1]);
      out += "]";
    }
    out += "],\"kind\":\"";
    out += to_string(map[i].kind);
    out += "\",\"lane_id\":" + std::to_string(map[i].lane_id) + "}";
  }
  out += "]";
}

void append_signals(std::string& out, const std::vector<SignalState>& signals) {
  out += "[";
  for (std::size_t i = 0; i < signals.size(); ++i) {
    if (i) out += ",";
    out += "{\"lane_id\":" + std::to_string(signals[i].lane_id) + ",\"phase\":\"";
    out += to_string(signals[i].phase);
    out += "\"}";
  }
  out += "]";
}

AgentState agent_from_json(const json& j) {
  AgentState a;
  a.x = j.at("x").get<double>();
  a.y = j.at("y").get<double>();
  a.heading = j.at("heading").get<double>();
  a.speed = j.at("speed").get<double>();
  a.kind = agent_kind_from(j.at("kind").get<std::string>());
  a.valid = j.at("valid").get<bool>();
  return a;
}

std::vector<std::vector<AgentState>> steps_from_json(const json& j) {
  std::vector<std::vector<AgentState>> steps;
  for (const auto& row : j) {
    std::vector<AgentState> states;
    for (const auto& a : row) states.push_back(agent_from_json(a));
    steps.push_back(std::move(states));
  }
  return steps;
}

std::vector<MapFeature> map_from_json(const json& j) {
  std::vector<MapFeature> map;
  for (const auto& f : j) {
    MapFeature mf;
    for (const auto& p : f.at("points"))
      mf.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    mf.kind = map_kind_from(f.at("kind").get<std::string>());
    mf.lane_id = f.at("lane_id").get<int>();
    map.push_back(std::move(mf));
  }
  return map;
}

std::vector<SignalState> signals_from_json(const json& j) {
  std::vector<SignalState> out;
  for (const auto& s : j)
    out.push_back({s.at("lane_id").get<int>(),
                   signal_phase_from(s.at("phase").get<std::string>())});
  return out;
}

}  // namespace

std::string scenario_to_json(const Scenario& s) {
  std::string out = "{\"id\":\"" + s.id + "\",\"step_seconds\":";
  append_double(out, s.step_seconds);
  out += ",\"history\":";
  append_steps(out, s.history);
  out += ",\"future\":";
  append_steps(out, s.future);
  out += ",\"map\":";
  append_map(out, s.map);
  out += ",\"signals\":";
  append_signals(out, s.signals);
  out += ",\"intent_labels\":[";
  for (std::size_t i = 0; i < s.intent_labels.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s.intent_labels[i]);
  }
  out += "],\"kind\":\"" + s.kind + "\"}";
  return out;
}

std::string rollout_to_json(const RolloutRecord& r) {
  std::string out = "{\"scenario_id\":\"" + r.scenario_id + "\"";
  out += ",\"rollout_index\":" + std::to_string(r.rollout_index);
  out += ",\"step_seconds\":";
  append_double(out, r.step_seconds);
  out += ",\"history\":";
  append_steps(out, r.history);
  out += ",\"sampled\":";
  append_steps(out, r.sampled);
  out += ",\"truth_future\":";
  append_steps(out, r.truth_future);
  out += ",\"map\":";
  append_map(out, r.map);
  out += ",\"signals\":";
  append_signals(out, r.signals);
  out += ",\"agents\":[";
  for (std::size_t n = 0; n < r.agents.size(); ++n) {
    if (n) out += ",";
    out += "{\"intention\":" + std::to_string(r.agents[n].intention) + ",\"style\":[";
    for (std::size_t i = 0; i < r.agents[n].style.size(); ++i) {
      if (i) out += ",";
      append_double(out, r.agents[n].style[i]);
    }
    out += "],\"nu\":[";
    for (std::size_t i = 0; i < r.agents[n].nu.size(); ++i) {
      if (i) out += ",";
      append_double(out, r.agents[n].nu[i]);
    }
    out += "]}";
  }
  out += "]}";
  return out;
}

void atomic_write_file(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + tmp);
    f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!f) throw std::runtime_error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

void write_scenarios(const std::string& path, const std::vector<Scenario>& scenarios) {
  std::string out;
  for (const Scenario& s : scenarios) {
    out += scenario_to_json(s);
    out += "\n";
  }
  atomic_write_file(path, out);
}

std::vector<Scenario> read_scenarios(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open scenario file: " + path);
  std::vector<Scenario> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": malformed record: " + e.what());
    }
    Scenario s;
    s.id = j.at("id").get<std::string>();
    s.step_seconds = j.at("step_seconds").get<double>();
    s.history = steps_from_json(j.at("history"));
    s.future = steps_from_json(j.at("future"));
    s.map = map_from_json(j.at("map"));
    s.signals = signals_from_json(j.at("signals"));
    for (const auto& v : j.at("intent_labels")) s.intent_labels.push_back(v.get<int>());
    s.kind = j.at("kind").get<std::string>();
    s.validate();
    out.push_back(std::move(s));
  }
  return out;
}

void write_rollouts(const std::string& path, const std::vector<RolloutRecord>& rollouts) {
  std::string out;
  for (const RolloutRecord& r : rollouts) {
    out += rollout_to_json(r);
    out += "\n";
  }
  atomic_write_file(path, out);
}

std::vector<RolloutRecord> read_rollouts(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open rollout file: " + path);
  std::vector<RolloutRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": malformed record: " + e.what());
    }
    RolloutRecord r;
    r.scenario_id = j.at("scenario_id").get<std::string>();
    r.rollout_index = j.at("rollout_index").get<int>();
    r.step_seconds = j.at("step_seconds").get<double>();
    r.history = steps_from_json(j.at("history"));
    r.sampled = steps_from_json(j.at("sampled"));
    r.truth_future = steps_from_json(j.at("truth_future"));
    r.map = map_from_json(j.at("map"));
    r.signals = signals_from_json(j.at("signals"));
    for (const auto& a : j.at("agents")) {
      AgentLatents lat;
      lat.intention = a.at("intention").get<int>();
      for (const auto& v : a.at("style")) lat.style.push_back(v.get<double>());
      for (const auto& v : a.at("nu")) lat.nu.push_back(v.get<double>());
      r.agents.push_back(std::move(lat));
    }
    out.push_back(std::move(r));
  }
  return out;
}

// ---- synthetic datasets -------------------------------------------------

namespace {

// Dense polyline with cumulative arc length; poses are interpolated along it.
struct Route {
  std::vector<std::array<double, 2>> pts;
  std::vector<double> cum;

  void finalize() {
    cum.assign(pts.size(), 0.0);
    for (std::size_t i = 1; i < pts.size(); ++i)
      cum[i] = cum[i - 1] + std::hypot(pts[i][0] - pts[i - 1][0],
                                       pts[i][1] - pts[i - 1][1]);
  }
  double length() const { return cum.back(); }

  PosedObject pose_at(double s) const {
    s = std::clamp(s, 0.0, length());
    std::size_t hi = 1;
    while (hi + 1 < pts.size() && cum[hi] < s) ++hi;
    const double seg = cum[hi] - cum[hi - 1];
    const double f = seg > 0.0 ? (s - cum[hi - 1]) / seg : 0.0;
    PosedObject p;
    p.x = pts[hi - 1][0] + f * (pts[hi][0] - pts[hi - 1][0]);
    p.y = pts[hi - 1][1] + f * (pts[hi][1] - pts[hi - 1][1]);
    p.heading = std::atan2(pts[hi][1] - pts[hi - 1][1], pts[hi][0] - pts[hi - 1][0]);
    return p;
  }
};

void add_line(Route& r, std::array<double, 2> a, std::array<double, 2> b,
              double spacing = 0.25) {
  const double len = std::hypot(b[0] - a[0], b[1] - a[1]);
  const int n = std::max(1, static_cast<int>(std::ceil(len / spacing)));
  const bool fresh = r.pts.empty();
  for (int i = fresh ? 0 : 1; i <= n; ++i) {
    const double f = static_cast<double>(i) / n;
    r.pts.push_back({a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])});
  }
}

// Quarter-turn arc leaving (x0, y0) with heading 0; sign +1 turns left.
void add_quarter_arc(Route& r, double x0, double y0, double radius, double sign) {
  const int n = 48;
  for (int i = 1; i <= n; ++i) {
    const double phi = 0.5 * M_PI * i / n;
    r.pts.push_back({x0 + radius * std::sin(phi),
                     y0 + sign * radius * (1.0 - std::cos(phi))});
  }
}

// Integrates speed toward a target with a symmetric acceleration limit and
// samples the pose track at each step.
std::vector<AgentState> script_track(const Route& route, double s0, double v0,
                                     const std::function<double(double)>& v_target,
                                     int steps, double dt, AgentKind kind) {
  std::vector<AgentState> track;
  double s = s0, v = v0;
  const double max_accel = 2.5;
  for (int t = 0; t < steps; ++t) {
    PosedObject p = route.pose_at(s);
    AgentState a;
    a.x = p.x;
    a.y = p.y;
    a.heading = wrap_angle(p.heading);
    a.speed = v;
    a.kind = kind;
    a.valid = true;
    track.push_back(a);
    const double target = v_target(s);
    v += std::clamp(target - v, -max_accel * dt, max_accel * dt);
    v = std::clamp(v, 0.0, 20.0);
    s += v * dt;
  }
  return track;
}

std::vector<std::vector<AgentState>> transpose_tracks(
    const std::vector<std::vector<AgentState>>& per_agent) {
  const std::size_t steps = per_agent.at(0).size();
  std::vector<std::vector<AgentState>> per_step(steps);
  for (std::size_t t = 0; t < steps; ++t)
    for (const auto& track : per_agent) per_step[t].push_back(track[t]);
  return per_step;
}

constexpr int kHistorySteps = 11;  // 1.1 s at 0.1 s per step
constexpr int kFutureSteps = 30;
constexpr double kStep = 0.1;

Scenario make_intersection(std::uint64_t seed, int index) {
  RngStream rng(RngStream::derive({seed, 0xA11CE, static_cast<std::uint64_t>(index)}));
  const double half = 6.0, reach = 26.0;

  // Routes 0/1/2 = left / straight / right, sharing the west approach.
  std::vector<Route> routes(3);
  for (int k = 0; k < 3; ++k) add_line(routes[k], {-reach, 0.0}, {-half, 0.0});
  add_quarter_arc(routes[0], -half, 0.0, half, +1.0);
  add_line(routes[0], {0.0, half}, {0.0, reach});
  add_line(routes[1], {-half, 0.0}, {reach, 0.0});
  add_quarter_arc(routes[2], -half, 0.0, half, -1.0);
  add_line(routes[2], {0.0, -half}, {0.0, -reach});
  for (Route& r : routes) r.finalize();

  Scenario s;
  s.id = "ix3-" + std::to_string(seed) + "-" + std::to_string(index);
  s.kind = to_string(ToyKind::Intersection3Exit);
  s.step_seconds = kStep;
  for (int k = 0; k < 3; ++k) {
    MapFeature lane;
    lane.kind = MapKind::LaneCenter;
    lane.lane_id = k;
    // decimated copy keeps files small
    for (std::size_t i = 0; i < routes[k].pts.size(); i += 8)
      lane.points.push_back(routes[k].pts[i]);
    if (lane.points.back() != routes[k].pts.back())
      lane.points.push_back(routes[k].pts.back());
    s.map.push_back(std::move(lane));
  }
  int next_id = 3;
  const auto edge = [&](double x0, double y0, double x1, double y1) {
    MapFeature e;
    e.kind = MapKind::RoadEdge;
    e.lane_id = next_id++;
    e.points = {{x0, y0}, {x1, y1}};
    s.map.push_back(std::move(e));
  };
  edge(-reach, 3.7, -half, 3.7);
  edge(-reach, -3.7, -half, -3.7);
  edge(half, 3.7, reach, 3.7);
  edge(half, -3.7, reach, -3.7);
  edge(3.7, half, 3.7, reach);
  edge(-3.7, half, -3.7, reach);
  edge(3.7, -half, 3.7, -reach);
  edge(-3.7, -half, -3.7, -reach);
  MapFeature stop;
  stop.kind = MapKind::StopLine;
  stop.lane_id = next_id++;
  stop.points = {{-half, -2.0}, {-half, 2.0}};
  s.map.push_back(std::move(stop));
  MapFeature cross;
  cross.kind = MapKind::Crosswalk;
  cross.lane_id = next_id++;
  cross.points = {{-half - 1.5, -4.0}, {-half - 1.5, 4.0}};
  s.map.push_back(std::move(cross));
  for (int k = 0; k < 3; ++k) s.signals.push_back({k, SignalPhase::Green});

  const int exit_choice = index % 3;
  const double v0 = 5.5 + 2.0 * rng.uniform();
  const double v_turn = 4.5 + 1.0 * rng.uniform();
  const double s0 = 2.0 + 4.0 * rng.uniform();
  const double approach_len = reach - half;  // arc starts here
  const Route& route = routes[exit_choice];
  const auto target = [&](double s_now) {
    if (exit_choice == 1) return v0;  // straight through
    if (s_now < approach_len - 6.0) return v0;
    if (s_now < approach_len + 0.5 * M_PI * half) return v_turn;
    return v0;
  };
  std::vector<AgentState> track = script_track(
      route, s0, v0, target, kHistorySteps + kFutureSteps, kStep, AgentKind::Vehicle);
  std::vector<std::vector<AgentState>> per_step = transpose_tracks({track});
  s.history.assign(per_step.begin(), per_step.begin() + kHistorySteps);
  s.future.assign(per_step.begin() + kHistorySteps, per_step.end());
  s.intent_labels = {exit_choice};
  return s;
}

Scenario make_straight_road(std::uint64_t seed, int index) {
  RngStream rng(RngStream::derive({seed, 0x57A1D, static_cast<std::uint64_t>(index)}));
  Scenario s;
  s.id = "road-" + std::to_string(seed) + "-" + std::to_string(index);
  s.kind = to_string(ToyKind::StraightRoad);
  s.step_seconds = kStep;

  const double lane_w = 3.7;
  ArrivalModel arrivals{2.0};
  const int n_agents = std::min(3, sample_agent_count(arrivals, rng));
  std::vector<Route> routes(n_agents);
  for (int n = 0; n < n_agents; ++n) {
    const double y = n * lane_w;
    add_line(routes[n], {-40.0, y}, {70.0, y});
    routes[n].finalize();
    MapFeature lane;
    lane.kind = MapKind::LaneCenter;
    lane.lane_id = n;
    lane.points = {{-40.0, y}, {70.0, y}};
    s.map.push_back(std::move(lane));
  }
  MapFeature lo;
  lo.kind = MapKind::RoadEdge;
  lo.lane_id = 10;
  lo.points = {{-40.0, -0.5 * lane_w}, {70.0, -0.5 * lane_w}};
  s.map.push_back(std::move(lo));
  MapFeature hi;
  hi.kind = MapKind::RoadEdge;
  hi.lane_id = 11;
  hi.points = {{-40.0, (n_agents - 0.5) * lane_w}, {70.0, (n_agents - 0.5) * lane_w}};
  s.map.push_back(std::move(hi));

  std::vector<std::vector<AgentState>> tracks;
  for (int n = 0; n < n_agents; ++n) {
    const double v0 = 6.0 + 5.0 * rng.uniform();
    const double vt = 6.0 + 7.0 * rng.uniform();  // per-agent cruise style
    const double start = 2.0 + 25.0 * rng.uniform();
    tracks.push_back(script_track(
        routes[n], start, v0, [vt](double) { return vt; },
        kHistorySteps + kFutureSteps, kStep, AgentKind::Vehicle));
  }
  std::vector<std::vector<AgentState>> per_step = transpose_tracks(tracks);
  s.history.assign(per_step.begin(), per_step.begin() + kHistorySteps);
  s.future.assign(per_step.begin() + kHistorySteps, per_step.end());
  s.intent_labels.assign(n_agents, -1);
  return s;
}

Scenario make_merge(std::uint64_t seed, int index) {
  RngStream rng(RngStream::derive({seed, 0x3E26E, static_cast<std::uint64_t>(index)}));
  Scenario s;
  s.id = "merge-" + std::to_string(seed) + "-" + std::to_string(index);
  s.kind = to_string(ToyKind::Merge);
  s.step_seconds = kStep;

  Route main_route;
  add_line(main_route, {-40.0, 0.0}, {70.0, 0.0});
  main_route.finalize();
  Route ramp_route;  // shallow 0.12 rad approach keeps per-step heading steps small
  add_line(ramp_route, {-35.0, -4.2}, {0.0, 0.0});
  add_line(ramp_route, {0.0, 0.0}, {70.0, 0.0});
  ramp_route.finalize();

  MapFeature main_lane;
  main_lane.kind = MapKind::LaneCenter;
  main_lane.lane_id = 0;
  main_lane.points = {{-40.0, 0.0}, {70.0, 0.0}};
  s.map.push_back(std::move(main_lane));
  MapFeature ramp_lane;
  ramp_lane.kind = MapKind::LaneCenter;
  ramp_lane.lane_id = 1;
  ramp_lane.points = {{-35.0, -4.2}, {0.0, 0.0}, {70.0, 0.0}};
  s.map.push_back(std::move(ramp_lane));
  MapFeature edge;
  edge.kind = MapKind::RoadEdge;
  edge.lane_id = 2;
  edge.points = {{-40.0, 1.85}, {70.0, 1.85}};
  s.map.push_back(std::move(edge));

  const double v_main = 8.0 + 4.0 * rng.uniform();
  const double v_ramp = 7.0 + 3.0 * rng.uniform();
  std::vector<std::vector<AgentState>> tracks;
  tracks.push_back(script_track(
      main_route, 45.0 + 10.0 * rng.uniform(), v_main, [v_main](double) { return v_main; },
      kHistorySteps + kFutureSteps, kStep, AgentKind::Vehicle));
  tracks.push_back(script_track(
      ramp_route, 5.0 * rng.uniform(), v_ramp, [v_ramp](double) { return v_ramp; },
      kHistorySteps + kFutureSteps, kStep, AgentKind::Vehicle));
  std::vector<std::vector<AgentState>> per_step = transpose_tracks(tracks);
  s.history.assign(per_step.begin(), per_step.begin() + kHistorySteps);
  s.future.assign(per_step.begin() + kHistorySteps, per_step.end());
  s.intent_labels = {-1, -1};
  return s;
}

}  // namespace

ToyKind toy_kind_from(const std::string& s) {
  if (s == "intersection-3exit") return ToyKind::Intersection3Exit;
  if (s == "straight-road") return ToyKind::StraightRoad;
  if (s == "merge") return ToyKind::Merge;
  throw std::invalid_argument("unknown toy dataset kind: " + s);
}

const char* to_string(ToyKind k) {
  switch (k) {
    case ToyKind::Intersection3Exit: return "intersection-3exit";
    case ToyKind::StraightRoad: return "straight-road";
    case ToyKind::Merge: return "merge";
  }
  return "intersection-3exit";
}

std::vector<Scenario> generate_toy_dataset(ToyKind kind, int n_scenarios,
                                           std::uint64_t seed) {
  if (n_scenarios < 1) throw std::invalid_argument("generate_toy_dataset: n must be >= 1");
  std::vector<Scenario> out;
  out.reserve(n_scenarios);
  for (int i = 0; i < n_scenarios; ++i) {
    switch (kind) {
      case ToyKind::Intersection3Exit: out.push_back(make_intersection(seed, i)); break;
      case ToyKind::StraightRoad: out.push_back(make_straight_road(seed, i)); break;
      case ToyKind::Merge: out.push_back(make_merge(seed, i)); break;
    }
    out.back().validate();
  }
  return out;
}

std::vector<std::array<double, 2>> exit_points(const Scenario& s) {
  std::vector<std::array<double, 2>> exits;
  for (const MapFeature& f : s.map)
    if (f.kind == MapKind::LaneCenter && f.lane_id >= 0 && f.lane_id < 3)
      exits.push_back(f.points.back());
  if (exits.size() != 3)
    throw std::invalid_argument("exit_points: scenario is not an intersection-3exit");
  return exits;
}

// ---- metrics --------------------------------------------------------

double min_ade(const std::vector<std::vector<std::vector<AgentState>>>& rollouts,
               const std::vector<std::vector<AgentState>>& truth) {
  if (rollouts.empty()) throw std::invalid_argument("min_ade: no rollouts");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& sampled : rollouts) {
    if (sampled.size() != truth.size())
      throw std::invalid_argument("min_ade: step-count mismatch");
    double total = 0.0;
    int count = 0;
    for (std::size_t t = 0; t < truth.size(); ++t) {
      if (sampled[t].size() != truth[t].size())
        throw std::invalid_argument("min_ade: agent-count mismatch");
      for (std::size_t n = 0; n < truth[t].size(); ++n) {
        if (!truth[t][n].valid) continue;
        total += std::hypot(sampled[t][n].x - truth[t][n].x,
                            sampled[t][n].y - truth[t][n].y);
        ++count;
      }
    }
    if (count > 0) best = std::min(best, total / count);
  }
  return best;
}

namespace {

// Separating-axis overlap test for two oriented rectangles.
bool obb_overlap(const AgentState& a, const AgentState& b) {
  const auto fa = footprint(a.kind);
  const auto fb = footprint(b.kind);
  const double ha[2] = {0.5 * fa[0], 0.5 * fa[1]};
  const double hb[2] = {0.5 * fb[0], 0.5 * fb[1]};
  const double axes[4][2] = {
      {std::cos(a.heading), std::sin(a.heading)},
      {-std::sin(a.heading), std::cos(a.heading)},
      {std::cos(b.heading), std::sin(b.heading)},
      {-std::sin(b.heading), std::cos(b.heading)},
  };
  const double d[2] = {b.x - a.x, b.y - a.y};
  for (const auto& axis : axes) {
    const double dist = std::abs(d[0] * axis[0] + d[1] * axis[1]);
    double ra = 0.0, rb = 0.0;
    for (int i = 0; i < 2; ++i) {
      ra += ha[i] * std::abs(axes[i][0] * axis[0] + axes[i][1] * axis[1]);
      rb += hb[i] * std::abs(axes[2 + i][0] * axis[0] + axes[2 + i][1] * axis[1]);
    }
    if (dist > ra + rb) return false;
  }
  return true;
}

double point_segment_distance(double px, double py, const std::array<double, 2>& a,
                              const std::array<double, 2>& b) {
  const double vx = b[0] - a[0], vy = b[1] - a[1];
  const double len2 = vx * vx + vy * vy;
  double f = 0.0;
  if (len2 > 0.0) f = std::clamp(((px - a[0]) * vx + (py - a[1]) * vy) / len2, 0.0, 1.0);
  return std::hypot(px - (a[0] + f * vx), py - (a[1] + f * vy));
}

}  // namespace

double collision_rate(const std::vector<std::vector<AgentState>>& trajectory) {
  int total = 0, collided = 0;
  for (const auto& step : trajectory) {
    const int n = static_cast<int>(step.size());
    std::vector<bool> hit(n, false);
    for (int i = 0; i < n; ++i) {
      if (!step[i].valid) continue;
      ++total;
      for (int j = i + 1; j < n; ++j) {
        if (!step[j].valid) continue;
        if (obb_overlap(step[i], step[j])) {
          hit[i] = true;
          hit[j] = true;
        }
      }
    }
    for (int i = 0; i < n; ++i)
      if (hit[i]) ++collided;
  }
  return total == 0 ? 0.0 : static_cast<double>(collided) / total;
}

double offroad_rate(const std::vector<std::vector<AgentState>>& trajectory,
                    const std::vector<MapFeature>& map) {
  std::vector<const MapFeature*> lanes;
  for (const MapFeature& f : map)
    if (f.kind == MapKind::LaneCenter) lanes.push_back(&f);
  if (lanes.empty()) return 0.0;
  int total = 0, off = 0;
  for (const auto& step : trajectory)
    for (const AgentState& a : step) {
      if (!a.valid) continue;
      ++total;
      double best = std::numeric_limits<double>::infinity();
      for (const MapFeature* lane : lanes)
        for (std::size_t i = 1; i < lane->points.size(); ++i)
          best = std::min(best, point_segment_distance(a.x, a.y, lane->points[i - 1],
                                                       lane->points[i]));
      if (best > kLaneHalfWidth) ++off;
    }
  return total == 0 ? 0.0 : static_cast<double>(off) / total;
}

}  // namespace niva
