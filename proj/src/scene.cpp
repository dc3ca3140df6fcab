#include "niva/scene.hpp"

#include <stdexcept>

namespace niva {

void Scenario::validate() const {
  if (history.empty()) throw std::invalid_argument("Scenario: history must have >= 1 step");
  const std::size_t n = history[0].size();
  for (const auto& step : history)
    if (step.size() != n) throw std::invalid_argument("Scenario: ragged history");
  for (const auto& step : future)
    if (step.size() != n) throw std::invalid_argument("Scenario: ragged future");
  if (!(step_seconds > 0.0)) throw std::invalid_argument("Scenario: bad step_seconds");
  for (const auto& f : map) {
    if (f.points.size() < 2) throw std::invalid_argument("Scenario: map polyline too short");
    for (std::size_t i = 1; i < f.points.size(); ++i)
      if (f.points[i] == f.points[i - 1])
        throw std::invalid_argument("Scenario: repeated polyline point");
  }
  for (const auto& s : signals) {
    bool found = false;
    for (const auto& f : map) found = found || f.lane_id == s.lane_id;
    if (!found) throw std::invalid_argument("Scenario: signal references unknown lane");
  }
}

const char* to_string(MapKind k) {
  switch (k) {
    case MapKind::LaneCenter: return "lane-center";
    case MapKind::RoadEdge: return "road-edge";
    case MapKind::Crosswalk: return "crosswalk";
    case MapKind::StopLine: return "stop-line";
  }
  return "lane-center";
}

const char* to_string(AgentKind k) {
  switch (k) {
    case AgentKind::Vehicle: return "vehicle";
    case AgentKind::Pedestrian: return "pedestrian";
    case AgentKind::Cyclist: return "cyclist";
  }
  return "vehicle";
}

const char* to_string(SignalPhase p) {
  switch (p) {
    case SignalPhase::Red: return "red";
    case SignalPhase::Yellow: return "yellow";
    case SignalPhase::Green: return "green";
    case SignalPhase::Unknown: return "unknown";
  }
  return "unknown";
}

MapKind map_kind_from(const std::string& s) {
  if (s == "lane-center") return MapKind::LaneCenter;
  if (s == "road-edge") return MapKind::RoadEdge;
  if (s == "crosswalk") return MapKind::Crosswalk;
  if (s == "stop-line") return MapKind::StopLine;
  throw std::invalid_argument("unknown map kind: " + s);
}

AgentKind agent_kind_from(const std::string& s) {
  if (s == "vehicle") return AgentKind::Vehicle;
  if (s == "pedestrian") return AgentKind::Pedestrian;
  if (s == "cyclist") return AgentKind::Cyclist;
  throw std::invalid_argument("unknown agent kind: " + s);
}

SignalPhase signal_phase_from(const std::string& s) {
  if (s == "red") return SignalPhase::Red;
  if (s == "yellow") return SignalPhase::Yellow;
  if (s == "green") return SignalPhase::Green;
  if (s == "unknown") return SignalPhase::Unknown;
  throw std::invalid_argument("unknown signal phase: " + s);
}

std::array<double, 2> footprint(AgentKind k) {
  switch (k) {
    case AgentKind::Vehicle: return {4.5, 2.0};
    case AgentKind::Pedestrian: return {0.8, 0.8};
    case AgentKind::Cyclist: return {1.8, 0.6};
  }
  return {4.5, 2.0};
}

}  // namespace niva
