#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace niva {

// Wraps an angle to (-pi, pi].
inline double wrap_angle(double a) {
  double r = std::fmod(a + M_PI, 2.0 * M_PI);
  if (r <= 0.0) r += 2.0 * M_PI;
  return r - M_PI;
}

enum class MapKind { LaneCenter, RoadEdge, Crosswalk, StopLine };
enum class AgentKind { Vehicle, Pedestrian, Cyclist };
enum class SignalPhase { Red, Yellow, Green, Unknown };

struct MapFeature {
  std::vector<std::array<double, 2>> points;  // >= 2, consecutive distinct
  MapKind kind = MapKind::LaneCenter;
  int lane_id = -1;
};

struct AgentState {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;  // radians in (-pi, pi]
  double speed = 0.0;    // m/s, >= 0
  AgentKind kind = AgentKind::Vehicle;
  bool valid = true;
};

struct SignalState {
  int lane_id = -1;  // must reference an existing MapFeature
  SignalPhase phase = SignalPhase::Unknown;
};

// Position + heading + time index; the argument type of relative encodings.
struct PosedObject {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  double time = 0.0;  // in steps
};

struct Scenario {
  std::string id;
  double step_seconds = 0.1;
  // history[t][n] / future[t][n]; all tracks share the step grid
  std::vector<std::vector<AgentState>> history;
  std::vector<std::vector<AgentState>> future;  // ground truth, may be empty
  std::vector<MapFeature> map;
  std::vector<SignalState> signals;
  // generator metadata: scripted intention label per agent (-1 if unknown)
  std::vector<int> intent_labels;
  std::string kind;

  int num_agents() const { return history.empty() ? 0 : (int)history[0].size(); }
  int history_steps() const { return (int)history.size(); }
  int future_steps() const { return (int)future.size(); }
  void validate() const;  // throws on grid/shape violations
};

const char* to_string(MapKind k);
const char* to_string(AgentKind k);
const char* to_string(SignalPhase p);
MapKind map_kind_from(const std::string& s);
AgentKind agent_kind_from(const std::string& s);
SignalPhase signal_phase_from(const std::string& s);

// Footprint length x width in meters, by agent kind.
std::array<double, 2> footprint(AgentKind k);

}  // namespace niva
