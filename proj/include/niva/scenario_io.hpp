#pragma once

#include <string>
#include <vector>

#include "niva/scene.hpp"

namespace niva {

// Per-agent latents stored with a rollout so it can be reproduced exactly.
struct AgentLatents {
  int intention = 0;
  std::vector<double> style;
  std::vector<double> nu;  // common random numbers, reused across the horizon
};

struct RolloutRecord {
  std::string scenario_id;
  int rollout_index = 0;
  double step_seconds = 0.1;
  std::vector<std::vector<AgentState>> history;
  std::vector<std::vector<AgentState>> sampled;       // T_p x N
  std::vector<std::vector<AgentState>> truth_future;  // empty when unknown
  std::vector<MapFeature> map;
  std::vector<SignalState> signals;
  std::vector<AgentLatents> agents;
};

// One JSON object per line; floats carry 17 significant digits.
void write_scenarios(const std::string& path, const std::vector<Scenario>& scenarios);
std::vector<Scenario> read_scenarios(const std::string& path);
void write_rollouts(const std::string& path, const std::vector<RolloutRecord>& rollouts);
std::vector<RolloutRecord> read_rollouts(const std::string& path);

std::string scenario_to_json(const Scenario& s);
std::string rollout_to_json(const RolloutRecord& r);

// temp-file + rename
void atomic_write_file(const std::string& path, const std::string& contents);

// ---- synthetic datasets --------------------------------------------------

enum class ToyKind { Intersection3Exit, StraightRoad, Merge };
ToyKind toy_kind_from(const std::string& s);
const char* to_string(ToyKind k);

std::vector<Scenario> generate_toy_dataset(ToyKind kind, int n_scenarios,
                                           std::uint64_t seed);

// Exit endpoints of an intersection-3exit map, indexed by scripted intention.
std::vector<std::array<double, 2>> exit_points(const Scenario& s);

// ---- metrics ---------------------------------------------------------

// min over rollouts of mean-over-agents mean-over-steps (x, y) displacement.
double min_ade(const std::vector<std::vector<std::vector<AgentState>>>& rollouts,
               const std::vector<std::vector<AgentState>>& truth);

double collision_rate(const std::vector<std::vector<AgentState>>& trajectory);
double offroad_rate(const std::vector<std::vector<AgentState>>& trajectory,
                    const std::vector<MapFeature>& map);

constexpr double kLaneHalfWidth = 2.5;  // drivable corridor around lane centers

}  // namespace niva
