#pragma once

#include "niva/model.hpp"
#include "niva/scene.hpp"

namespace niva {

// Input encoders: embedding of the discrete kind concatenated with continuous
// features relative to the object's own pose, projected by a two-layer MLP.
// Nothing here sees absolute coordinates, so encodings are invariant to global
// translation of the scenario.

std::vector<std::array<double, 2>> resample_polyline(
    const std::vector<std::array<double, 2>>& points, int n);

// Representative pose of a map feature: arc-length midpoint + local direction.
PosedObject map_anchor_pose(const MapFeature& f);

Tensor encode_map(const MapFeature& f, const EncoderP& enc, const ModelConfig& cfg);

// heading_rate is supplied by the tokenizer (wrapped delta to the previous
// valid step over dt); invalid states encode to an exact zero vector.
Tensor encode_agent_state(const AgentState& s, double heading_rate,
                          const EncoderP& enc, const ModelConfig& cfg);

Tensor encode_signal(const SignalState& sig, const EncoderP& enc,
                     const ModelConfig& cfg);

// Pose anchor for a signal token: first point / direction of its lane.
PosedObject signal_anchor_pose(const SignalState& sig,
                               const std::vector<MapFeature>& map);

}  // namespace niva
