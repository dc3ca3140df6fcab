#include "niva/attention.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace niva {

namespace {
constexpr double kTimeScale = 0.1;  // step index -> model units
}

RelPose rel_pose(const PosedObject& i, const PosedObject& j) {
  RelPose r;
  const double dx = j.x - i.x, dy = j.y - i.y;
  r.distance = std::hypot(dx, dy);
  r.bearing = r.distance > 0.0 ? wrap_angle(std::atan2(dy, dx) - i.heading) : 0.0;
  r.heading_diff = wrap_angle(j.heading - i.heading);
  r.time_diff = j.time - i.time;
  return r;
}

DenseArray fourier_features(const std::array<double, 4>& x, const DenseArray& freq) {
  const int m = freq.rows();
  DenseArray out = DenseArray::zeros({2 * m});
  for (int i = 0; i < m; ++i) {
    double phase = 0.0;
    for (int j = 0; j < 4; ++j) phase += freq.at(i, j) * x[j];
    phase *= 2.0 * M_PI;
    out.at(i) = std::cos(phase);
    out.at(m + i) = std::sin(phase);
  }
  return out;
}

Tensor positional_bias(const RelPose& r, const ModelView& mv, const ModelConfig& cfg) {
  const std::array<double, 4> x = {r.distance * cfg.obs_pos_scale, r.bearing,
                                   r.heading_diff, r.time_diff * kTimeScale};
  Tensor feats(fourier_features(x, mv.fourier.value()));
  return mlp_vec(feats, mv.pos_bias);
}

Tensor apply_dropout(const Tensor& x, DropoutCtx* ctx) {
  if (ctx == nullptr || ctx->prob <= 0.0) return x;
  DenseArray mask = DenseArray::zeros(x.shape());
  for (double& v : mask.data) v = ctx->rng->uniform() < ctx->prob ? 0.0 : 1.0;
  return scale(mul(x, Tensor(std::move(mask))), 1.0 / (1.0 - ctx->prob));
}

namespace {

struct ProjectedKV {
  Tensor k;  // {J, d}
  Tensor v;
  int count = 0;
};

ProjectedKV project_kv(const Tensor& keys, const AttnP& p) {
  ProjectedKV kv;
  kv.count = keys.defined() ? keys.shape()[0] : 0;
  if (kv.count == 0) return kv;
  kv.k = matmul(keys, p.k_w);
  kv.v = linear_rows(keys, p.v);
  return kv;
}

Tensor attend(const Tensor& q, const ProjectedKV& kv, const AttnP& p, int heads) {
  const int d = q.shape()[0];
  if (kv.count == 0) return Tensor(DenseArray::zeros({d}));
  const int dh = d / heads;
  Tensor qp = reshape(linear_vec(q, p.q), {1, d});
  std::vector<Tensor> head_outs;
  head_outs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Tensor qh = slice(qp, 1, h * dh, dh);
    Tensor kh = slice(kv.k, 1, h * dh, dh);
    Tensor vh = slice(kv.v, 1, h * dh, dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt((double)dh));
    Tensor weights = softmax(scores, 1);
    head_outs.push_back(matmul(weights, vh));  // {1, dh}
  }
  Tensor cat = concat(head_outs, 1);
  return reshape(add_row(matmul(cat, p.o.w), p.o.b), {d});
}

Tensor layer_norm_vec(const Tensor& x, const LayerNormP& p) {
  return layer_norm(x, p.gain, p.offset);
}

Tensor plain_layer_norm(const Tensor& x) {
  const int d = x.shape()[0];
  return layer_norm(x, Tensor(DenseArray::full({d}, 1.0)), Tensor(DenseArray::zeros({d})));
}

// Indices of up to `limit` nearest entries, ordered by (distance, index).
std::vector<int> nearest_indices(double px, double py,
                                 const std::vector<PosedObject>& poses,
                                 const std::vector<bool>* mask, int skip, int limit) {
  std::vector<std::pair<double, int>> order;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    if (static_cast<int>(i) == skip) continue;
    if (mask != nullptr && !(*mask)[i]) continue;
    order.emplace_back(std::hypot(poses[i].x - px, poses[i].y - py), static_cast<int>(i));
  }
  std::sort(order.begin(), order.end());
  if (static_cast<int>(order.size()) > limit) order.resize(limit);
  std::vector<int> idx;
  idx.reserve(order.size());
  for (const auto& [dist, i] : order) idx.push_back(i);
  return idx;
}

}  // namespace

Tensor single_query_mha(const Tensor& q, const Tensor& keys, const AttnP& p,
                        int heads, DropoutCtx* dropout) {
  ProjectedKV kv = project_kv(keys, p);
  Tensor out = attend(q, kv, p, heads);
  return apply_dropout(out, dropout);
}

std::vector<Tensor> temporal_stack(std::vector<Tensor> queries, const Tensor& keys,
                                   const std::vector<TemporalLayerP>& layers,
                                   int heads, DropoutCtx* dropout) {
  for (const TemporalLayerP& layer : layers) {
    ProjectedKV kv = project_kv(keys, layer.attn);
    for (Tensor& x : queries) {
      Tensor a = attend(layer_norm_vec(x, layer.ln_attn), kv, layer.attn, heads);
      x = add(x, apply_dropout(a, dropout));
      Tensor f = mlp_vec(layer_norm_vec(x, layer.ln_ff), layer.ff);
      x = add(x, apply_dropout(f, dropout));
    }
  }
  return queries;
}

std::optional<PosedObject> SceneTokens::latest_pose(int agent, int before_step) const {
  const int upto = std::min(before_step, steps());
  for (int j = upto - 1; j >= 0; --j)
    if (obs_valid[agent][j]) return obs_pose[agent][j];
  return std::nullopt;
}

SceneTokens tokenize_scene(const std::vector<MapFeature>& map,
                           const std::vector<SignalState>& signals, int num_agents,
                           double step_seconds, const ModelView& mv,
                           const ModelConfig& cfg) {
  SceneTokens tok;
  tok.num_agents = num_agents;
  tok.step_seconds = step_seconds;
  for (const MapFeature& f : map) {
    tok.map_tok.push_back(encode_map(f, mv.enc_map, cfg));
    tok.map_pose.push_back(map_anchor_pose(f));
  }
  for (const SignalState& sig : signals) {
    tok.map_tok.push_back(encode_signal(sig, mv.enc_signal, cfg));
    tok.map_pose.push_back(signal_anchor_pose(sig, map));
  }
  tok.obs_tok.resize(num_agents);
  tok.obs_pose.resize(num_agents);
  tok.obs_valid.resize(num_agents);
  tok.prev_state.resize(num_agents);
  tok.has_prev.assign(num_agents, false);
  return tok;
}

void append_step(SceneTokens& tok, const std::vector<AgentState>& states,
                 const ModelView& mv, const ModelConfig& cfg) {
  if (static_cast<int>(states.size()) != tok.num_agents)
    throw std::invalid_argument("append_step: agent count mismatch");
  const int t = tok.steps();
  for (int n = 0; n < tok.num_agents; ++n) {
    const AgentState& s = states[n];
    double rate = 0.0;
    if (s.valid && tok.has_prev[n])
      rate = wrap_angle(s.heading - tok.prev_state[n].heading) / tok.step_seconds;
    tok.obs_tok[n].push_back(encode_agent_state(s, rate, mv.enc_agent, cfg));
    PosedObject p;
    p.x = s.x;
    p.y = s.y;
    p.heading = s.heading;
    p.time = t;
    tok.obs_pose[n].push_back(p);
    tok.obs_valid[n].push_back(s.valid);
    if (s.valid) {
      tok.prev_state[n] = s;
      tok.has_prev[n] = true;
    }
  }
}

std::vector<LatentDist> open_loop_predict(const SceneTokens& tokens, int agent,
                                          int target_step,
                                          const std::vector<int>& intentions,
                                          const ModelView& mv, const ModelConfig& cfg,
                                          DropoutCtx* dropout) {
  const auto q_pose_opt = tokens.latest_pose(agent, target_step);
  if (!q_pose_opt) throw std::runtime_error("open_loop_predict: empty history");
  PosedObject q_pose = *q_pose_opt;
  q_pose.time = target_step;

  std::vector<Tensor> key_rows;
  const int upto = std::min(target_step, tokens.steps());
  for (int j = 0; j < upto; ++j) {
    if (!tokens.obs_valid[agent][j]) continue;
    Tensor bias = positional_bias(rel_pose(q_pose, tokens.obs_pose[agent][j]), mv, cfg);
    key_rows.push_back(add(tokens.obs_tok[agent][j], bias));
  }
  if (key_rows.empty()) throw std::runtime_error("open_loop_predict: empty history");
  Tensor keys = stack_rows(key_rows);

  std::vector<Tensor> queries;
  queries.reserve(intentions.size());
  for (int k : intentions) {
    if (k < 0 || k >= cfg.num_intentions)
      throw std::invalid_argument("open_loop_predict: intention out of range");
    queries.push_back(reshape(gather_rows(mv.intention_emb, {k}), {cfg.model_dim}));
  }
  std::vector<Tensor> outs =
      temporal_stack(std::move(queries), keys, mv.temporal, cfg.num_heads, dropout);

  std::vector<LatentDist> dists;
  dists.reserve(outs.size());
  for (const Tensor& o : outs) {
    LatentDist d;
    d.mean = linear_vec(o, mv.open_mean_head);
    d.var = add_scalar(softplus(linear_vec(o, mv.open_var_head)), cfg.var_floor);
    dists.push_back(std::move(d));
  }
  return dists;
}

std::vector<LatentDist> adaptive_refine(const SceneTokens& tokens, int target_step,
                                        const std::vector<LatentDist>& open,
                                        const std::vector<Tensor>& styles,
                                        const ModelView& mv, const ModelConfig& cfg,
                                        DropoutCtx* dropout,
                                        const RefineTrace* neighbor_trace,
                                        RefineTrace* record) {
  const int n_agents = static_cast<int>(open.size());
  std::vector<std::optional<PosedObject>> cur(n_agents);
  std::vector<bool> cur_valid(n_agents, false);
  std::vector<PosedObject> cur_pose(n_agents);
  for (int n = 0; n < n_agents; ++n) {
    cur[n] = tokens.latest_pose(n, target_step);
    if (cur[n]) {
      cur_valid[n] = true;
      cur_pose[n] = *cur[n];
      cur_pose[n].time = target_step;
    }
  }

  std::vector<Tensor> means(n_agents), prev_means(n_agents);
  for (int n = 0; n < n_agents; ++n) means[n] = open[n].mean;

  for (std::size_t bi = 0; bi < mv.blocks.size(); ++bi) {
    const BlockP& block = mv.blocks[bi];
    prev_means = means;
    if (record != nullptr) record->block_inputs.push_back(prev_means);
    const std::vector<Tensor>& nbr_means =
        neighbor_trace != nullptr ? neighbor_trace->block_inputs.at(bi) : prev_means;
    for (int n = 0; n < n_agents; ++n) {
      if (!cur_valid[n]) continue;  // nothing to refine against
      const Tensor& style = styles[n];
      Tensor trunk1 = gelu(linear_vec(style, block.mod_map.trunk));
      Tensor alpha1 = linear_vec(trunk1, block.mod_map.scale_head);
      Tensor beta1 = linear_vec(trunk1, block.mod_map.shift_head);
      Tensor gate1 = linear_vec(trunk1, block.mod_map.gate_head);

      Tensor q_in = prev_means[n];
      Tensor q1 = add(mul(alpha1, plain_layer_norm(q_in)), beta1);

      std::vector<int> map_idx = nearest_indices(
          cur_pose[n].x, cur_pose[n].y, tokens.map_pose, nullptr, -1, cfg.n_map_nearest);
      Tensor q2;
      if (map_idx.empty()) {
        q2 = Tensor(DenseArray::zeros({cfg.model_dim}));
      } else {
        std::vector<Tensor> rows;
        rows.reserve(map_idx.size());
        for (int i : map_idx) {
          PosedObject mp = tokens.map_pose[i];
          mp.time = target_step;  // static tokens share the query time
          Tensor bias = positional_bias(rel_pose(cur_pose[n], mp), mv, cfg);
          rows.push_back(add(tokens.map_tok[i], bias));
        }
        q2 = single_query_mha(q1, stack_rows(rows), block.map_attn, cfg.num_heads,
                              dropout);
      }
      Tensor q3 = add(q_in, mul(gate1, q2));

      Tensor trunk2 = gelu(linear_vec(style, block.mod_agent.trunk));
      Tensor alpha2 = linear_vec(trunk2, block.mod_agent.scale_head);
      Tensor beta2 = linear_vec(trunk2, block.mod_agent.shift_head);
      Tensor gate2 = linear_vec(trunk2, block.mod_agent.gate_head);

      Tensor q4 = add(mul(alpha2, plain_layer_norm(q3)), beta2);
      std::vector<PosedObject> agent_anchor(n_agents);
      for (int i = 0; i < n_agents; ++i)
        if (cur_valid[i]) agent_anchor[i] = cur_pose[i];
      std::vector<int> nbr_idx =
          nearest_indices(cur_pose[n].x, cur_pose[n].y, agent_anchor, &cur_valid, n,
                          cfg.n_agent_nearest);
      Tensor q5;
      if (nbr_idx.empty()) {
        q5 = Tensor(DenseArray::zeros({cfg.model_dim}));
      } else {
        std::vector<Tensor> rows;
        rows.reserve(nbr_idx.size());
        for (int i : nbr_idx) {
          Tensor bias = positional_bias(rel_pose(cur_pose[n], cur_pose[i]), mv, cfg);
          rows.push_back(add(nbr_means[i], bias));
        }
        q5 = single_query_mha(q4, stack_rows(rows), block.agent_attn, cfg.num_heads,
                              dropout);
      }
      means[n] = add(q3, mul(gate2, q5));
    }
  }

  std::vector<LatentDist> out(n_agents);
  for (int n = 0; n < n_agents; ++n) {
    out[n].mean = means[n];
    out[n].var =
        add_scalar(softplus(linear_vec(means[n], mv.closed_var_head)), cfg.var_floor);
  }
  return out;
}

std::vector<StepDists> niva_forward(const SceneTokens& tokens, int history_steps,
                                    int future_steps,
                                    const std::vector<int>& intentions,
                                    const std::vector<Tensor>& styles,
                                    const ModelView& mv, const ModelConfig& cfg,
                                    DropoutCtx* dropout) {
  if (static_cast<int>(intentions.size()) != tokens.num_agents ||
      static_cast<int>(styles.size()) != tokens.num_agents)
    throw std::invalid_argument("niva_forward: per-agent latents size mismatch");
  if (tokens.steps() < history_steps + future_steps)
    throw std::invalid_argument("niva_forward: tokens are missing conditioning steps");
  std::vector<StepDists> out;
  out.reserve(future_steps);
  for (int t = 0; t < future_steps; ++t) {
    const int target = history_steps + t;
    StepDists sd;
    sd.open.resize(tokens.num_agents);
    for (int n = 0; n < tokens.num_agents; ++n)
      sd.open[n] = open_loop_predict(tokens, n, target, {intentions[n]}, mv, cfg,
                                     dropout)[0];
    sd.closed = adaptive_refine(tokens, target, sd.open, styles, mv, cfg, dropout);
    out.push_back(std::move(sd));
  }
  return out;
}

std::vector<double> obs_vector(const AgentState& s, const ModelConfig& cfg) {
  return {s.x * cfg.obs_pos_scale, s.y * cfg.obs_pos_scale, s.heading};
}

AgentState state_from_obs(const std::vector<double>& o, const AgentState& prev,
                          double step_seconds, const ModelConfig& cfg) {
  AgentState s;
  s.x = o[0] / cfg.obs_pos_scale;
  s.y = o[1] / cfg.obs_pos_scale;
  s.heading = wrap_angle(o[2]);
  s.speed = std::hypot(s.x - prev.x, s.y - prev.y) / step_seconds;
  s.kind = prev.kind;
  s.valid = true;
  return s;
}

}  // namespace niva
