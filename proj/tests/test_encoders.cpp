#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "model_harness.hpp"
#include "niva/encoders.hpp"

using namespace niva;

namespace {

MapFeature sample_lane() {
  MapFeature f;
  f.kind = MapKind::LaneCenter;
  f.lane_id = 0;
  f.points = {{0.0, 0.0}, {10.0, 0.5}, {20.0, 2.0}, {30.0, 5.0}};
  return f;
}

}  // namespace

TEST_CASE("map encoding is deterministic and kind-sensitive") {
  ModelConfig cfg = harness::micro_config();
  ParamStore store = init_params(cfg, 1);
  ModelView mv = bind_model(store, cfg, nullptr);

  MapFeature f = sample_lane();
  Tensor a = encode_map(f, mv.enc_map, cfg);
  Tensor b = encode_map(f, mv.enc_map, cfg);
  CHECK(a.value().data == b.value().data);

  MapFeature g = f;
  g.kind = MapKind::RoadEdge;
  Tensor c = encode_map(g, mv.enc_map, cfg);
  double diff = 0.0;
  for (int i = 0; i < cfg.model_dim; ++i) diff += std::abs(a(i) - c(i));
  CHECK(diff > 1e-6);
}

TEST_CASE("encoders project to 128 dimensions at paper scale") {
  ModelConfig cfg = ModelConfig::paper_scale();
  CHECK(cfg.model_dim == 128);
  ParamStore store = init_params(cfg, 2);
  ModelView mv = bind_model(store, cfg, nullptr);
  CHECK(encode_map(sample_lane(), mv.enc_map, cfg).shape() == std::vector<int>{128});
  AgentState s;
  s.speed = 5.0;
  CHECK(encode_agent_state(s, 0.0, mv.enc_agent, cfg).shape() == std::vector<int>{128});
  CHECK(ModelConfig::best_reported_neighborhood() == std::array<int, 2>{128, 5});
}

TEST_CASE("invalid agent states encode to the zero vector") {
  ModelConfig cfg = harness::micro_config();
  ParamStore store = init_params(cfg, 3);
  ModelView mv = bind_model(store, cfg, nullptr);
  AgentState s;
  s.valid = false;
  s.x = 100.0;
  s.speed = 9.0;
  Tensor z = encode_agent_state(s, 0.3, mv.enc_agent, cfg);
  for (int i = 0; i < cfg.model_dim; ++i) CHECK(z(i) == 0.0);
}

TEST_CASE("degenerate polylines are rejected") {
  ModelConfig cfg = harness::micro_config();
  ParamStore store = init_params(cfg, 4);
  ModelView mv = bind_model(store, cfg, nullptr);
  MapFeature bad;
  bad.points = {{1.0, 1.0}};
  CHECK_THROWS_AS(encode_map(bad, mv.enc_map, cfg), std::invalid_argument);
  MapFeature repeated;
  repeated.points = {{1.0, 1.0}, {1.0, 1.0}};
  CHECK_THROWS_AS(encode_map(repeated, mv.enc_map, cfg), std::invalid_argument);
}

TEST_CASE("encodings are invariant to global translation of the scenario") {
  ModelConfig cfg = harness::micro_config();
  ParamStore store = init_params(cfg, 5);
  ModelView mv = bind_model(store, cfg, nullptr);

  Scenario s = harness::two_agent_scene();
  Scenario moved = s;
  for (auto* steps : {&moved.history, &moved.future})
    for (auto& step : *steps)
      for (auto& a : step) {
        a.x += 100.0;
        a.y += -50.0;
      }
  for (auto& f : moved.map)
    for (auto& p : f.points) {
      p[0] += 100.0;
      p[1] += -50.0;
    }

  SceneTokens t0 = harness::tokenize_full(s, mv, cfg);
  SceneTokens t1 = harness::tokenize_full(moved, mv, cfg);
  for (std::size_t i = 0; i < t0.map_tok.size(); ++i)
    for (int j = 0; j < cfg.model_dim; ++j)
      CHECK(std::abs(t0.map_tok[i](j) - t1.map_tok[i](j)) <= 1e-9);
  for (int n = 0; n < t0.num_agents; ++n)
    for (int t = 0; t < t0.steps(); ++t)
      for (int j = 0; j < cfg.model_dim; ++j)
        CHECK(std::abs(t0.obs_tok[n][t](j) - t1.obs_tok[n][t](j)) <= 1e-9);
}

TEST_CASE("gradients flow through the encoder MLPs") {
  ModelConfig cfg = harness::micro_config();
  ParamStore store = init_params(cfg, 6);
  harness::randomize_params(store, 7);
  MapFeature f = sample_lane();
  AgentState s;
  s.x = 3.0;
  s.y = -1.0;
  s.heading = 0.4;
  s.speed = 6.0;
  const double err = harness::full_model_grad_check(
      store, cfg,
      [&](const ModelView& mv, Tape*) {
        Tensor w(random_array({cfg.model_dim}, 99));
        Tensor sig = encode_signal(SignalState{0, SignalPhase::Green}, mv.enc_signal, cfg);
        return add(add(dot(encode_map(f, mv.enc_map, cfg), w),
                       dot(encode_agent_state(s, 0.2, mv.enc_agent, cfg), w)),
                   dot(sig, w));
      });
  CHECK(err <= 1e-5);
}
