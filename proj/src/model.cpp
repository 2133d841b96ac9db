#include "live/model.hpp"

#include "live/error.hpp"

namespace live {

ModelConfig ModelConfig::defaults() {
  ModelConfig cfg;
  cfg.vocab_size = Vocabulary::standard().size();
  return cfg;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (vocab_size <= token::kFirstWordId) fail("vocab_size too small");
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0) fail("dimensions must be positive");
  if (d_model % n_heads != 0) {
    fail("d_model " + std::to_string(d_model) + " not divisible by n_heads " + std::to_string(n_heads));
  }
  if (tokens_per_frame < 1) fail("tokens_per_frame must be >= 1");
  if (frame_feature_dim < 1) fail("frame_feature_dim must be >= 1");
  if (max_context < tokens_per_frame + 1) fail("max_context too small");
  if (mlp_hidden < 0) fail("mlp_hidden must be >= 0");
}

std::vector<std::pair<std::string, std::pair<Index, Index>>> tensor_shapes(const ModelConfig& c) {
  const Index d = c.d_model;
  std::vector<std::pair<std::string, std::pair<Index, Index>>> out = {
      {"token_embedding", {c.vocab_size, d}},
      {"position_embedding", {c.max_context, d}},
  };
  for (int i = 0; i < c.n_layers; ++i) {
    const std::string p = "layers." + std::to_string(i) + ".";
    out.push_back({p + "attn_norm", {1, d}});
    out.push_back({p + "wq", {d, d}});
    out.push_back({p + "wk", {d, d}});
    out.push_back({p + "wv", {d, d}});
    out.push_back({p + "wo", {d, d}});
    out.push_back({p + "mlp_norm", {1, d}});
    out.push_back({p + "w1", {d, c.hidden()}});
    out.push_back({p + "w2", {c.hidden(), d}});
  }
  out.push_back({"final_norm", {1, d}});
  out.push_back({"proj.w1", {c.frame_feature_dim, d}});
  out.push_back({"proj.b1", {1, d}});
  out.push_back({"proj.w2", {d, static_cast<Index>(c.tokens_per_frame) * d}});
  out.push_back({"proj.b2", {1, static_cast<Index>(c.tokens_per_frame) * d}});
  return out;
}

int64_t parameter_count(const ModelConfig& c) {
  const int64_t d = c.d_model;
  const int64_t h = c.hidden();
  const int64_t pd = static_cast<int64_t>(c.tokens_per_frame) * d;
  const int64_t per_layer = 2 * d + 4 * d * d + 2 * d * h;
  return c.vocab_size * d + c.max_context * d + c.n_layers * per_layer + d +
         (c.frame_feature_dim * d + d) + (d * pd + pd);
}

}  // namespace live
