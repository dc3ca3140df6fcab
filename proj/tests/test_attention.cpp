#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "model_harness.hpp"
#include "niva/attention.hpp"

using namespace niva;

TEST_CASE("rel_pose basics") {
  PosedObject a{3.0, 4.0, 0.7, 5.0};
  RelPose self = rel_pose(a, a);
  CHECK(self.distance == 0.0);
  CHECK(self.bearing == 0.0);
  CHECK(self.heading_diff == 0.0);
  CHECK(self.time_diff == 0.0);

  PosedObject i{0.0, 0.0, 0.9, 2.0};
  PosedObject j{std::cos(0.9), std::sin(0.9), 0.9, 2.0};
  RelPose r = rel_pose(i, j);
  CHECK(r.distance == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(r.bearing) <= 1e-12);
  CHECK(std::abs(r.heading_diff) <= 1e-12);
  CHECK(r.time_diff == 0.0);
}

TEST_CASE("rel_pose is invariant under rigid motion of both objects") {
  RngStream rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    PosedObject i{10 * rng.normal(), 10 * rng.normal(), wrap_angle(4 * rng.normal()),
                  std::floor(5 * rng.uniform())};
    PosedObject j{10 * rng.normal(), 10 * rng.normal(), wrap_angle(4 * rng.normal()),
                  std::floor(5 * rng.uniform())};
    const double th = wrap_angle(6 * rng.normal());
    const double tx = 50 * rng.normal(), ty = 50 * rng.normal();
    const auto move = [&](const PosedObject& p) {
      PosedObject q;
      q.x = std::cos(th) * p.x - std::sin(th) * p.y + tx;
      q.y = std::sin(th) * p.x + std::cos(th) * p.y + ty;
      q.heading = wrap_angle(p.heading + th);
      q.time = p.time;
      return q;
    };
    RelPose r0 = rel_pose(i, j);
    RelPose r1 = rel_pose(move(i), move(j));
    CHECK(std::abs(r0.distance - r1.distance) <= 1e-9);
    CHECK(std::abs(wrap_angle(r0.bearing - r1.bearing)) <= 1e-9);
    CHECK(std::abs(wrap_angle(r0.heading_diff - r1.heading_diff)) <= 1e-9);
    CHECK(r0.time_diff == r1.time_diff);
  }
}

TEST_CASE("fourier features: zero input, Pythagorean identity, length") {
  DenseArray freq = random_array({32, 4}, 3);
  DenseArray at_zero = fourier_features({0, 0, 0, 0}, freq);
  REQUIRE(at_zero.size() == 64);
  for (int i = 0; i < 32; ++i) {
    CHECK(at_zero.at(i) == 1.0);
    CHECK(at_zero.at(32 + i) == 0.0);
  }
  RngStream rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    std::array<double, 4> x{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
    DenseArray f = fourier_features(x, freq);
    double norm2 = 0.0;
    for (double v : f.data) norm2 += v * v;
    CHECK(std::abs(norm2 - 32.0) <= 1e-12);
  }
}

TEST_CASE("positional bias is deterministic, distance-sensitive, differentiable") {
  ModelConfig cfg = harness::micro_config();
  ParamStore store = init_params(cfg, 8);
  ModelView mv = bind_model(store, cfg, nullptr);
  RelPose near{1.0, 0.0, 0.0, 0.0};
  RelPose far{2.0, 0.0, 0.0, 0.0};
  Tensor a = positional_bias(near, mv, cfg);
  Tensor b = positional_bias(near, mv, cfg);
  Tensor c = positional_bias(far, mv, cfg);
  CHECK(a.value().data == b.value().data);
  double diff = 0.0;
  for (int i = 0; i < cfg.model_dim; ++i) diff += std::abs(a(i) - c(i));
  CHECK(diff > 1e-6);

  harness::randomize_params(store, 9);
  const double err = harness::full_model_grad_check(
      store, cfg,
      [&](const ModelView& view, Tape*) {
        Tensor w(random_array({cfg.model_dim}, 100));
        return dot(positional_bias(near, view, cfg), w);
      });
  CHECK(err <= 1e-5);
}

TEST_CASE("single-key attention puts weight exactly 1 on its only key") {
  ModelConfig cfg = harness::micro_config();
  ParamStore store = init_params(cfg, 10);
  ModelView mv = bind_model(store, cfg, nullptr);
  const AttnP& p = mv.temporal[0].attn;
  Tensor key(random_array({1, cfg.model_dim}, 11));
  Tensor q1(random_array({cfg.model_dim}, 12));
  Tensor q2(random_array({cfg.model_dim}, 13));
  // With a single key the softmax is exactly 1 regardless of the query, so
  // the output is a function of that key alone.
  Tensor o1 = single_query_mha(q1, key, p, cfg.num_heads, nullptr);
  Tensor o2 = single_query_mha(q2, key, p, cfg.num_heads, nullptr);
  CHECK(o1.value().data == o2.value().data);

  Tensor empty;
  Tensor zero = single_query_mha(q1, empty, p, cfg.num_heads, nullptr);
  for (int i = 0; i < cfg.model_dim; ++i) CHECK(zero(i) == 0.0);
}

TEST_CASE("open-loop priors: positive variances, intention sensitivity, empty history") {
  ModelConfig cfg = harness::micro_config();
  ParamStore store = init_params(cfg, 14);
  ModelView mv = bind_model(store, cfg, nullptr);
  Scenario s = harness::two_agent_scene();
  SceneTokens tok = harness::tokenize_full(s, mv, cfg);

  auto dists = open_loop_predict(tok, 0, s.history_steps(), {0, 1, 2}, mv, cfg, nullptr);
  REQUIRE(dists.size() == 3);
  for (const auto& d : dists) {
    CHECK(d.mean.shape() == std::vector<int>{cfg.model_dim});
    for (int i = 0; i < cfg.model_dim; ++i) CHECK(d.var(i) >= cfg.var_floor);
  }
  double diff = 0.0;
  for (int i = 0; i < cfg.model_dim; ++i) diff += std::abs(dists[0].mean(i) - dists[1].mean(i));
  CHECK(diff > 1e-6);

  SceneTokens fresh = tokenize_scene(s.map, s.signals, s.num_agents(), s.step_seconds, mv, cfg);
  CHECK_THROWS_AS(open_loop_predict(fresh, 0, 0, {0}, mv, cfg, nullptr),
                  std::runtime_error);
}

TEST_CASE("zero-initialized gates make the closed loop an exact identity") {
  ModelConfig cfg = harness::micro_config();
  cfg.n_blocks = 2;
  ParamStore store = init_params(cfg, 15);
  ModelView mv = bind_model(store, cfg, nullptr);
  RngStream rng(16);
  for (int trial = 0; trial < 10; ++trial) {
    Scenario s = generate_toy_dataset(ToyKind::Merge, 1, 100 + trial)[0];
    SceneTokens tok = harness::tokenize_full(s, mv, cfg);
    std::vector<int> intentions(s.num_agents());
    std::vector<Tensor> styles;
    for (int n = 0; n < s.num_agents(); ++n) {
      intentions[n] = static_cast<int>(rng.uniform() * cfg.num_intentions);
      styles.push_back(Tensor(random_array({cfg.style_dim}, 200 + trial * 7 + n)));
    }
    auto steps = niva_forward(tok, s.history_steps(), s.future_steps(), intentions,
                              styles, mv, cfg, nullptr);
    for (const auto& sd : steps)
      for (int n = 0; n < s.num_agents(); ++n)
        CHECK(sd.closed[n].mean.value().data == sd.open[n].mean.value().data);
  }
}

TEST_CASE("agent permutation permutes outputs bitwise") {
  ModelConfig cfg = harness::micro_config();
  ParamStore store = init_params(cfg, 17);
  harness::randomize_params(store, 18);  // gates nonzero: interactions active
  ModelView mv = bind_model(store, cfg, nullptr);
  Scenario s = harness::two_agent_scene();
  REQUIRE(s.num_agents() == 2);

  Scenario swapped = s;
  for (auto* steps : {&swapped.history, &swapped.future})
    for (auto& step : *steps) std::swap(step[0], step[1]);
  std::swap(swapped.intent_labels[0], swapped.intent_labels[1]);

  SceneTokens t0 = harness::tokenize_full(s, mv, cfg);
  SceneTokens t1 = harness::tokenize_full(swapped, mv, cfg);
  std::vector<Tensor> styles = {Tensor(random_array({cfg.style_dim}, 19)),
                                Tensor(random_array({cfg.style_dim}, 20))};
  auto f0 = niva_forward(t0, s.history_steps(), s.future_steps(), {0, 1}, styles, mv,
                         cfg, nullptr);
  auto f1 = niva_forward(t1, s.history_steps(), s.future_steps(), {1, 0},
                         {styles[1], styles[0]}, mv, cfg, nullptr);
  for (std::size_t t = 0; t < f0.size(); ++t)
    for (int n = 0; n < 2; ++n) {
      CHECK(f0[t].closed[n].mean.value().data == f1[t].closed[1 - n].mean.value().data);
      CHECK(f0[t].closed[n].var.value().data == f1[t].closed[1 - n].var.value().data);
    }
}

TEST_CASE("end-to-end two-agent gradient check") {
  ModelConfig cfg = harness::micro_config();
  ParamStore store = init_params(cfg, 21);
  harness::randomize_params(store, 22);
  Scenario s = harness::two_agent_scene();
  s.future.resize(3);  // keep the finite-difference loop cheap

  const double err = harness::full_model_grad_check(
      store, cfg,
      [&](const ModelView& mv, Tape*) {
        SceneTokens tok = harness::tokenize_full(s, mv, cfg);
        std::vector<Tensor> styles = {Tensor(random_array({cfg.style_dim}, 23)),
                                      Tensor(random_array({cfg.style_dim}, 24))};
        auto steps = niva_forward(tok, s.history_steps(), 3, {0, 2}, styles, mv, cfg,
                                  nullptr);
        Tensor w(random_array({cfg.model_dim}, 25));
        Tensor loss(DenseArray::scalar(0.0));
        for (const auto& sd : steps)
          for (int n = 0; n < 2; ++n)
            loss = add(loss, add(dot(sd.closed[n].mean, w), dot(sd.closed[n].var, w)));
        return loss;
      },
      /*coord_stride=*/7);
  CHECK(err <= 1e-4);
}

TEST_CASE("full adaptive-norm block composed end to end passes grad_check") {
  ModelConfig cfg = harness::micro_config();
  ParamStore store = init_params(cfg, 26);
  harness::randomize_params(store, 27);
  Scenario s = harness::two_agent_scene();

  const double err = harness::full_model_grad_check(
      store, cfg,
      [&](const ModelView& mv, Tape* tape) {
        SceneTokens tok = harness::tokenize_full(s, mv, cfg);
        const int target = s.history_steps();
        std::vector<LatentDist> open(2);
        std::vector<Tensor> styles;
        for (int n = 0; n < 2; ++n) {
          DenseArray mu = random_array({cfg.model_dim}, 300 + n);
          DenseArray var = random_array({cfg.model_dim}, 310 + n);
          for (double& v : var.data) v = 0.3 + std::abs(v);
          open[n].mean = tape ? tape->leaf(mu) : Tensor(mu);
          open[n].var = Tensor(var);
          styles.push_back(Tensor(random_array({cfg.style_dim}, 320 + n)));
        }
        auto refined = adaptive_refine(tok, target, open, styles, mv, cfg, nullptr);
        Tensor w(random_array({cfg.model_dim}, 330));
        return add(dot(refined[0].mean, w), dot(refined[1].var, w));
      },
      /*coord_stride=*/5);
  CHECK(err <= 1e-5);
}
