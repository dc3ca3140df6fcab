#include "niva/model.hpp"

#include <json.hpp>

#include <cmath>
#include <stdexcept>

namespace niva {

using nlohmann::json;

ModelConfig ModelConfig::paper_scale() {
  ModelConfig cfg;
  cfg.model_dim = 128;
  cfg.num_intentions = 6;
  cfg.n_map_nearest = 64;
  cfg.n_agent_nearest = 5;
  return cfg;
}

void ModelConfig::validate() const {
  if (model_dim < 4 || model_dim % num_heads != 0)
    throw std::invalid_argument("ModelConfig: model_dim must be a positive multiple of num_heads");
  if (num_intentions < 1) throw std::invalid_argument("ModelConfig: K must be >= 1");
  if (style_dim < 1 || fourier_features < 1 || n_blocks < 0 || n_temporal_layers < 1)
    throw std::invalid_argument("ModelConfig: bad architecture sizes");
  if (map_resample_points < 2)
    throw std::invalid_argument("ModelConfig: map_resample_points must be >= 2");
  if (!(emission_noise > 0.0)) throw std::invalid_argument("ModelConfig: eps must be > 0");
  if (!(obs_pos_scale > 0.0)) throw std::invalid_argument("ModelConfig: obs_pos_scale must be > 0");
}

std::string ModelConfig::to_json() const {
  json j;
  j["model_dim"] = model_dim;
  j["num_heads"] = num_heads;
  j["style_dim"] = style_dim;
  j["num_intentions"] = num_intentions;
  j["fourier_features"] = fourier_features;
  j["fourier_sigma"] = fourier_sigma;
  j["n_blocks"] = n_blocks;
  j["n_temporal_layers"] = n_temporal_layers;
  j["n_recognition_layers"] = n_recognition_layers;
  j["n_map_nearest"] = n_map_nearest;
  j["n_agent_nearest"] = n_agent_nearest;
  j["map_resample_points"] = map_resample_points;
  j["kind_embed_dim"] = kind_embed_dim;
  j["ff_mult"] = ff_mult;
  j["obs_dim"] = obs_dim;
  j["emission_noise"] = emission_noise;
  j["obs_pos_scale"] = obs_pos_scale;
  j["var_floor"] = var_floor;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  const json j = json::parse(text);
  ModelConfig cfg;
  cfg.model_dim = j.at("model_dim").get<int>();
  cfg.num_heads = j.at("num_heads").get<int>();
  cfg.style_dim = j.at("style_dim").get<int>();
  cfg.num_intentions = j.at("num_intentions").get<int>();
  cfg.fourier_features = j.at("fourier_features").get<int>();
  cfg.fourier_sigma = j.at("fourier_sigma").get<double>();
  cfg.n_blocks = j.at("n_blocks").get<int>();
  cfg.n_temporal_layers = j.at("n_temporal_layers").get<int>();
  cfg.n_recognition_layers = j.at("n_recognition_layers").get<int>();
  cfg.n_map_nearest = j.at("n_map_nearest").get<int>();
  cfg.n_agent_nearest = j.at("n_agent_nearest").get<int>();
  cfg.map_resample_points = j.at("map_resample_points").get<int>();
  cfg.kind_embed_dim = j.at("kind_embed_dim").get<int>();
  cfg.ff_mult = j.at("ff_mult").get<int>();
  cfg.obs_dim = j.at("obs_dim").get<int>();
  cfg.emission_noise = j.at("emission_noise").get<double>();
  cfg.obs_pos_scale = j.at("obs_pos_scale").get<double>();
  cfg.var_floor = j.at("var_floor").get<double>();
  cfg.validate();
  return cfg;
}

// ---- parameter schema ------------------------------------------------

namespace {

enum class Init { Zeros, Ones, Normal, Xavier };

// Walks the parameter tree once; the same walk allocates (init mode) and
// binds (lookup mode), so names and shapes cannot drift apart.
class ParamBuilder {
 public:
  ParamBuilder(ParamStore* store, RngStream* rng)  // init mode
      : store_init_(store), rng_(rng) {}
  ParamBuilder(const ParamStore* store, Tape* tape,  // bind mode
               std::vector<std::pair<std::string, Tensor>>* bound)
      : store_bind_(store), tape_(tape), bound_(bound) {}

  Tensor tensor(const std::string& name, std::vector<int> shape, Init init,
                bool decay, bool frozen = false, double init_scale = 1.0) {
    if (store_init_ != nullptr) {
      DenseArray value = DenseArray::zeros(shape);
      switch (init) {
        case Init::Zeros:
          break;
        case Init::Ones:
          for (double& v : value.data) v = 1.0;
          break;
        case Init::Normal:
          for (double& v : value.data) v = rng_->normal() * init_scale;
          break;
        case Init::Xavier: {
          const int fan_in = shape.size() == 2 ? shape[0] : shape.back();
          const int fan_out = shape.back();
          const double std = std::sqrt(2.0 / (fan_in + fan_out));
          for (double& v : value.data) v = rng_->normal() * std;
          break;
        }
      }
      store_init_->add(name, std::move(value), decay, frozen);
      return Tensor();  // unused in init mode
    }
    const ParamStore::Entry& e = store_bind_->at(name);
    if (e.value.shape != shape)
      throw std::runtime_error("parameter shape mismatch for " + name);
    Tensor t = (tape_ == nullptr || e.frozen) ? Tensor(e.value) : tape_->leaf(e.value);
    if (bound_ != nullptr) bound_->emplace_back(name, t);
    return t;
  }

  bool init_mode() const { return store_init_ != nullptr; }

 private:
  ParamStore* store_init_ = nullptr;
  RngStream* rng_ = nullptr;
  const ParamStore* store_bind_ = nullptr;
  Tape* tape_ = nullptr;
  std::vector<std::pair<std::string, Tensor>>* bound_ = nullptr;
};

LinearP make_linear(ParamBuilder& b, const std::string& name, int in, int out,
                    Init w_init = Init::Xavier) {
  LinearP p;
  p.w = b.tensor(name + ".w", {in, out}, w_init, /*decay=*/w_init != Init::Zeros);
  p.b = b.tensor(name + ".b", {out}, Init::Zeros, false);
  return p;
}

// Gate heads: both weight and bias start at zero so the block is an identity.
LinearP make_zero_linear(ParamBuilder& b, const std::string& name, int in, int out) {
  LinearP p;
  p.w = b.tensor(name + ".w", {in, out}, Init::Zeros, false);
  p.b = b.tensor(name + ".b", {out}, Init::Zeros, false);
  return p;
}

MlpP make_mlp(ParamBuilder& b, const std::string& name, int in, int hidden, int out) {
  MlpP p;
  p.l0 = make_linear(b, name + ".0", in, hidden);
  p.l1 = make_linear(b, name + ".1", hidden, out);
  return p;
}

LayerNormP make_layer_norm(ParamBuilder& b, const std::string& name, int dim) {
  LayerNormP p;
  p.gain = b.tensor(name + ".gain", {dim}, Init::Ones, false);
  p.offset = b.tensor(name + ".offset", {dim}, Init::Zeros, false);
  return p;
}

AttnP make_attn(ParamBuilder& b, const std::string& name, int dim) {
  AttnP p;
  p.q = make_linear(b, name + ".q", dim, dim);
  p.k_w = b.tensor(name + ".k.w", {dim, dim}, Init::Xavier, true);
  p.v = make_linear(b, name + ".v", dim, dim);
  p.o = make_linear(b, name + ".o", dim, dim);
  return p;
}

TemporalLayerP make_temporal_layer(ParamBuilder& b, const std::string& name,
                                   const ModelConfig& cfg) {
  TemporalLayerP p;
  p.ln_attn = make_layer_norm(b, name + ".ln1", cfg.model_dim);
  p.attn = make_attn(b, name + ".attn", cfg.model_dim);
  p.ln_ff = make_layer_norm(b, name + ".ln2", cfg.model_dim);
  p.ff = make_mlp(b, name + ".ff", cfg.model_dim, cfg.ff_mult * cfg.model_dim,
                  cfg.model_dim);
  return p;
}

ModulationP make_modulation(ParamBuilder& b, const std::string& name,
                            const ModelConfig& cfg) {
  ModulationP p;
  p.trunk = make_linear(b, name + ".trunk", cfg.style_dim, cfg.model_dim);
  p.scale_head = make_linear(b, name + ".scale", cfg.model_dim, cfg.model_dim);
  p.shift_head = make_linear(b, name + ".shift", cfg.model_dim, cfg.model_dim);
  p.gate_head = make_zero_linear(b, name + ".gate", cfg.model_dim, cfg.model_dim);
  return p;
}

BlockP make_block(ParamBuilder& b, const std::string& name, const ModelConfig& cfg) {
  BlockP p;
  p.mod_map = make_modulation(b, name + ".mod1", cfg);
  p.map_attn = make_attn(b, name + ".map_attn", cfg.model_dim);
  p.mod_agent = make_modulation(b, name + ".mod2", cfg);
  p.agent_attn = make_attn(b, name + ".agent_attn", cfg.model_dim);
  return p;
}

EncoderP make_encoder(ParamBuilder& b, const std::string& name, int num_kinds,
                      int cont_features, const ModelConfig& cfg) {
  EncoderP p;
  p.kind_emb = b.tensor(name + ".emb", {num_kinds, cfg.kind_embed_dim}, Init::Normal,
                        false, false, 0.5);
  p.mlp = make_mlp(b, name + ".mlp", cfg.kind_embed_dim + cont_features,
                   cfg.model_dim, cfg.model_dim);
  return p;
}

ModelView walk_schema(ParamBuilder& b, const ModelConfig& cfg) {
  ModelView mv;
  const int d = cfg.model_dim;
  const int map_cont = 2 * cfg.map_resample_points + 1;  // rel points + length
  mv.enc_map = make_encoder(b, "enc.map", 4, map_cont, cfg);
  mv.enc_agent = make_encoder(b, "enc.agent", 3, 4, cfg);  // speed, rate, cos, sin
  mv.enc_signal = make_encoder(b, "enc.signal", 4, 1, cfg);
  mv.fourier = b.tensor("fourier", {cfg.fourier_features, 4}, Init::Normal, false,
                        /*frozen=*/true, cfg.fourier_sigma);
  mv.pos_bias = make_mlp(b, "posbias", 2 * cfg.fourier_features, d, d);
  mv.intention_emb = b.tensor("intent.emb", {cfg.num_intentions, d}, Init::Normal,
                              false, false, 1.0);
  for (int i = 0; i < cfg.n_temporal_layers; ++i)
    mv.temporal.push_back(make_temporal_layer(b, "temporal." + std::to_string(i), cfg));
  mv.open_mean_head = make_linear(b, "open.mean", d, d);
  mv.open_var_head = make_linear(b, "open.var", d, d);
  for (int i = 0; i < cfg.n_blocks; ++i)
    mv.blocks.push_back(make_block(b, "block." + std::to_string(i), cfg));
  mv.closed_var_head = make_linear(b, "closed.var", d, d);
  // emission weight is stored as the map latent -> obs, i.e. {obs_dim, d}
  mv.emission.w = b.tensor("emission.w", {cfg.obs_dim, d}, Init::Xavier, true);
  mv.emission.b = b.tensor("emission.b", {cfg.obs_dim}, Init::Zeros, false);
  mv.recog_query = b.tensor("recog.query", {d}, Init::Normal, false, false, 0.5);
  for (int i = 0; i < cfg.n_recognition_layers; ++i)
    mv.recog_layers.push_back(make_temporal_layer(b, "recog." + std::to_string(i), cfg));
  mv.recog_mean_head = make_linear(b, "recog.mean", d, cfg.style_dim);
  mv.recog_var_head = make_linear(b, "recog.var", d, cfg.style_dim);
  return mv;
}

}  // namespace

ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ParamStore store;
  RngStream rng(RngStream::derive({seed, RngStream::hash_string("init")}));
  ParamBuilder b(&store, &rng);
  walk_schema(b, cfg);
  return store;
}

ModelView bind_model(const ParamStore& store, const ModelConfig& cfg, Tape* tape,
                     std::vector<std::pair<std::string, Tensor>>* bound) {
  ParamBuilder b(&store, tape, bound);
  return walk_schema(b, cfg);
}

Tensor linear_vec(const Tensor& x, const LinearP& p) {
  Tensor row = reshape(x, {1, x.shape()[0]});
  return reshape(add_row(matmul(row, p.w), p.b), {p.w.shape()[1]});
}

Tensor linear_rows(const Tensor& x, const LinearP& p) {
  return add_row(matmul(x, p.w), p.b);
}

Tensor mlp_vec(const Tensor& x, const MlpP& p) {
  return linear_vec(gelu(linear_vec(x, p.l0)), p.l1);
}

Tensor mlp_rows(const Tensor& x, const MlpP& p) {
  return linear_rows(gelu(linear_rows(x, p.l0)), p.l1);
}

}  // namespace niva
