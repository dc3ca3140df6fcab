#include "niva/encoders.hpp"

#include <cmath>
#include <stdexcept>

namespace niva {

std::vector<std::array<double, 2>> resample_polyline(
    const std::vector<std::array<double, 2>>& points, int n) {
  if (points.size() < 2) throw std::invalid_argument("resample_polyline: degenerate polyline");
  std::vector<double> cum(points.size(), 0.0);
  for (std::size_t i = 1; i < points.size(); ++i) {
    const double seg = std::hypot(points[i][0] - points[i - 1][0],
                                  points[i][1] - points[i - 1][1]);
    if (seg == 0.0) throw std::invalid_argument("resample_polyline: repeated point");
    cum[i] = cum[i - 1] + seg;
  }
  const double total = cum.back();
  std::vector<std::array<double, 2>> out(n);
  std::size_t seg_i = 1;
  for (int i = 0; i < n; ++i) {
    const double s = total * i / (n - 1);
    while (seg_i + 1 < points.size() && cum[seg_i] < s) ++seg_i;
    const double d = cum[seg_i] - cum[seg_i - 1];
    const double f = d > 0.0 ? (s - cum[seg_i - 1]) / d : 0.0;
    out[i] = {points[seg_i - 1][0] + f * (points[seg_i][0] - points[seg_i - 1][0]),
              points[seg_i - 1][1] + f * (points[seg_i][1] - points[seg_i - 1][1])};
  }
  return out;
}

PosedObject map_anchor_pose(const MapFeature& f) {
  const auto pts = resample_polyline(f.points, 3);  // midpoint by arc length
  PosedObject p;
  p.x = pts[1][0];
  p.y = pts[1][1];
  p.heading = std::atan2(pts[2][1] - pts[0][1], pts[2][0] - pts[0][0]);
  p.time = 0.0;
  return p;
}

Tensor encode_map(const MapFeature& f, const EncoderP& enc, const ModelConfig& cfg) {
  const auto pts = resample_polyline(f.points, cfg.map_resample_points);
  const PosedObject anchor = map_anchor_pose(f);
  std::vector<double> cont;
  cont.reserve(2 * pts.size() + 1);
  for (const auto& p : pts) {
    cont.push_back((p[0] - anchor.x) * cfg.obs_pos_scale);
    cont.push_back((p[1] - anchor.y) * cfg.obs_pos_scale);
  }
  double length = 0.0;
  for (std::size_t i = 1; i < f.points.size(); ++i)
    length += std::hypot(f.points[i][0] - f.points[i - 1][0],
                         f.points[i][1] - f.points[i - 1][1]);
  cont.push_back(length * cfg.obs_pos_scale);

  Tensor emb = reshape(gather_rows(enc.kind_emb, {static_cast<int>(f.kind)}),
                       {cfg.kind_embed_dim});
  Tensor feats = concat({emb, Tensor(DenseArray::vec(std::move(cont)))}, 0);
  return mlp_vec(feats, enc.mlp);
}

Tensor encode_agent_state(const AgentState& s, double heading_rate,
                          const EncoderP& enc, const ModelConfig& cfg) {
  if (!s.valid) return Tensor(DenseArray::zeros({cfg.model_dim}));
  std::vector<double> cont = {s.speed * cfg.obs_pos_scale, heading_rate,
                              std::cos(s.heading), std::sin(s.heading)};
  Tensor emb = reshape(gather_rows(enc.kind_emb, {static_cast<int>(s.kind)}),
                       {cfg.kind_embed_dim});
  Tensor feats = concat({emb, Tensor(DenseArray::vec(std::move(cont)))}, 0);
  return mlp_vec(feats, enc.mlp);
}

Tensor encode_signal(const SignalState& sig, const EncoderP& enc,
                     const ModelConfig& cfg) {
  Tensor emb = reshape(gather_rows(enc.kind_emb, {static_cast<int>(sig.phase)}),
                       {cfg.kind_embed_dim});
  Tensor feats = concat({emb, Tensor(DenseArray::vec({1.0}))}, 0);
  return mlp_vec(feats, enc.mlp);
}

PosedObject signal_anchor_pose(const SignalState& sig,
                               const std::vector<MapFeature>& map) {
  for (const MapFeature& f : map) {
    if (f.lane_id != sig.lane_id) continue;
    PosedObject p;
    p.x = f.points[0][0];
    p.y = f.points[0][1];
    p.heading = std::atan2(f.points[1][1] - f.points[0][1],
                           f.points[1][0] - f.points[0][0]);
    return p;
  }
  throw std::invalid_argument("signal references unknown lane " +
                              std::to_string(sig.lane_id));
}

}  // namespace niva
