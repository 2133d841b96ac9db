#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "live/graph.hpp"
#include "live/tensor.hpp"
#include "live/vocab.hpp"

namespace live {

/// Shape of the causal decoder and its frame projector.
struct ModelConfig {
  int vocab_size = 0;
  int d_model = 128;
  int n_layers = 2;
  int n_heads = 4;
  int max_context = 2048;
  int tokens_per_frame = 1;  // p: 1 (CLS only) or 1 + h*w pooled patches
  int frame_feature_dim = 16;
  int mlp_hidden = 0;  // 0 means 4 * d_model
  bool shared_stream_eos = false;

  /// Standard vocabulary size filled in; everything else at defaults.
  static ModelConfig defaults();

  int hidden() const { return mlp_hidden > 0 ? mlp_hidden : 4 * d_model; }
  int head_dim() const { return d_model / n_heads; }
  void validate() const;  // throws ConfigError

  bool operator==(const ModelConfig&) const = default;
};

/// Closed-form number of scalars in ModelParams for a config.
int64_t parameter_count(const ModelConfig& config);

template <typename Scalar>
struct LayerParams {
  Tensor<Scalar> attn_norm, wq, wk, wv, wo;
  Tensor<Scalar> mlp_norm, w1, w2;
};

/// All trainable tensors. The output head is tied to the token embedding.
template <typename Scalar>
struct ModelParams {
  ModelConfig config;
  Tensor<Scalar> token_embedding;     // V x d
  Tensor<Scalar> position_embedding;  // max_context x d
  std::vector<LayerParams<Scalar>> layers;
  Tensor<Scalar> final_norm;          // 1 x d
  Tensor<Scalar> proj_w1, proj_b1;    // c x d, 1 x d
  Tensor<Scalar> proj_w2, proj_b2;    // d x p*d, 1 x p*d

  /// Stable order; used by init, checkpoints and the optimizer.
  std::vector<std::pair<std::string, Tensor<Scalar>*>> named_tensors() {
    std::vector<std::pair<std::string, Tensor<Scalar>*>> out = {
        {"token_embedding", &token_embedding},
        {"position_embedding", &position_embedding},
    };
    for (size_t i = 0; i < layers.size(); ++i) {
      const std::string p = "layers." + std::to_string(i) + ".";
      auto& l = layers[i];
      out.insert(out.end(), {{p + "attn_norm", &l.attn_norm}, {p + "wq", &l.wq}, {p + "wk", &l.wk},
                             {p + "wv", &l.wv}, {p + "wo", &l.wo}, {p + "mlp_norm", &l.mlp_norm},
                             {p + "w1", &l.w1}, {p + "w2", &l.w2}});
    }
    out.insert(out.end(), {{"final_norm", &final_norm}, {"proj.w1", &proj_w1}, {"proj.b1", &proj_b1},
                           {"proj.w2", &proj_w2}, {"proj.b2", &proj_b2}});
    return out;
  }

  std::vector<std::pair<std::string, const Tensor<Scalar>*>> named_tensors() const {
    std::vector<std::pair<std::string, const Tensor<Scalar>*>> out;
    for (auto& [name, t] : const_cast<ModelParams*>(this)->named_tensors()) out.emplace_back(name, t);
    return out;
  }

  void zero_grad() {
    for (auto& [name, t] : named_tensors()) t->zero_grad();
  }
};

/// Expected shape of every named tensor, derived from the config alone.
std::vector<std::pair<std::string, std::pair<Index, Index>>> tensor_shapes(const ModelConfig& config);

/// Scaled-normal init (std 0.02); each block's last linear (wo, w2) and the
/// projector biases start at zero, norm gains at one. Deterministic in seed.
template <typename Scalar>
ModelParams<Scalar> init_model(const ModelConfig& config, uint64_t seed) {
  config.validate();
  ModelParams<Scalar> params;
  params.config = config;
  params.layers.resize(static_cast<size_t>(config.n_layers));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 0.02);
  const auto shapes = tensor_shapes(config);
  auto named = params.named_tensors();
  for (size_t i = 0; i < named.size(); ++i) {
    const auto& [name, tensor] = named[i];
    const auto [rows, cols] = shapes[i].second;
    tensor->value = MatrixX<Scalar>::Zero(rows, cols);
    const bool is_norm = name.find("norm") != std::string::npos;
    const bool zero_init = name.ends_with(".wo") || name.ends_with(".w2") || name.ends_with(".b1") ||
                           name.ends_with(".b2");
    if (name == "proj.w2") {
      tensor->value = tensor->value.unaryExpr([&](Scalar) { return static_cast<Scalar>(normal(rng)); });
    } else if (is_norm) {
      tensor->value.setOnes();
    } else if (!zero_init) {
      tensor->value = tensor->value.unaryExpr([&](Scalar) { return static_cast<Scalar>(normal(rng)); });
    }
  }
  return params;
}

template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& src) {
  ModelParams<To> dst;
  dst.config = src.config;
  dst.layers.resize(src.layers.size());
  auto from = src.named_tensors();
  auto to = dst.named_tensors();
  for (size_t i = 0; i < from.size(); ++i) to[i].second->value = from[i].second->value.template cast<To>();
  return dst;
}

// ---------------------------------------------------------------------------
// Model input: text tokens and frames in temporal order.

enum class ItemKind : uint8_t { Token, Frame };

/// A token id, or a row index into the accompanying frame-feature matrix.
struct Item {
  ItemKind kind = ItemKind::Token;
  int value = 0;

  static Item token(int id) { return {ItemKind::Token, id}; }
  static Item frame(int row) { return {ItemKind::Frame, row}; }
  friend bool operator==(const Item&, const Item&) = default;
};

template <typename Scalar>
struct ModelInput {
  std::vector<Item> items;
  MatrixX<Scalar> frames;  // one row of frame features per referenced frame
};

/// Positions after expanding every frame to p slots.
inline Index expanded_length(const std::vector<Item>& items, int tokens_per_frame) {
  Index n = 0;
  for (const Item& it : items) n += it.kind == ItemKind::Frame ? tokens_per_frame : 1;
  return n;
}

// ---------------------------------------------------------------------------
// Graph route: used for training and as the full-recompute reference.

template <typename Scalar>
struct LayerLeaves {
  NodeId attn_norm, wq, wk, wv, wo, mlp_norm, w1, w2;
};

template <typename Scalar>
struct ParamLeaves {
  NodeId token_embedding, position_embedding, final_norm, proj_w1, proj_b1, proj_w2, proj_b2;
  std::vector<LayerLeaves<Scalar>> layers;
};

template <typename Scalar>
ParamLeaves<Scalar> bind_parameters(Graph<Scalar>& g, ModelParams<Scalar>& params) {
  ParamLeaves<Scalar> leaves;
  leaves.token_embedding = g.parameter(params.token_embedding, "token_embedding");
  leaves.position_embedding = g.parameter(params.position_embedding, "position_embedding");
  for (size_t i = 0; i < params.layers.size(); ++i) {
    auto& l = params.layers[i];
    const std::string p = "layers." + std::to_string(i) + ".";
    leaves.layers.push_back({g.parameter(l.attn_norm, p + "attn_norm"), g.parameter(l.wq, p + "wq"),
                             g.parameter(l.wk, p + "wk"), g.parameter(l.wv, p + "wv"),
                             g.parameter(l.wo, p + "wo"), g.parameter(l.mlp_norm, p + "mlp_norm"),
                             g.parameter(l.w1, p + "w1"), g.parameter(l.w2, p + "w2")});
  }
  leaves.final_norm = g.parameter(params.final_norm, "final_norm");
  leaves.proj_w1 = g.parameter(params.proj_w1, "proj.w1");
  leaves.proj_b1 = g.parameter(params.proj_b1, "proj.b1");
  leaves.proj_w2 = g.parameter(params.proj_w2, "proj.w2");
  leaves.proj_b2 = g.parameter(params.proj_b2, "proj.b2");
  return leaves;
}

/// Appends the decoder over `input` to the graph and returns the logits node
/// (expanded_length x vocab). Positions start at position_offset.
template <typename Scalar>
NodeId build_logits(Graph<Scalar>& g, const ParamLeaves<Scalar>& leaves, const ModelConfig& cfg,
                    const ModelInput<Scalar>& input, Index position_offset = 0) {
  const int p = cfg.tokens_per_frame;
  const Index length = expanded_length(input.items, p);
  if (length == 0) throw ShapeError("build_logits: empty input");
  if (position_offset + length > cfg.max_context) {
    throw ContextOverflowError("sequence of " + std::to_string(position_offset + length) +
                               " positions exceeds max_context " + std::to_string(cfg.max_context));
  }

  std::vector<int> text_ids;
  std::vector<int> frame_rows;
  for (const Item& it : input.items) {
    if (it.kind == ItemKind::Token) {
      text_ids.push_back(it.value);
    } else {
      if (it.value < 0 || it.value >= input.frames.rows()) throw ShapeError("frame reference out of range");
      frame_rows.push_back(it.value);
    }
  }

  std::vector<NodeId> sources;
  int text_src = -1, frame_src = -1;
  if (!text_ids.empty()) {
    text_src = static_cast<int>(sources.size());
    sources.push_back(g.embedding(leaves.token_embedding, text_ids));
  }
  if (!frame_rows.empty()) {
    if (input.frames.cols() != cfg.frame_feature_dim) throw ShapeError("frame feature dimension mismatch");
    MatrixX<Scalar> feats(static_cast<Index>(frame_rows.size()), input.frames.cols());
    for (size_t i = 0; i < frame_rows.size(); ++i) feats.row(static_cast<Index>(i)) = input.frames.row(frame_rows[i]);
    NodeId f = g.constant(std::move(feats));
    NodeId h = g.silu(g.add_row(g.matmul(f, leaves.proj_w1), leaves.proj_b1));
    NodeId t = g.add_row(g.matmul(h, leaves.proj_w2), leaves.proj_b2);
    frame_src = static_cast<int>(sources.size());
    sources.push_back(g.reshape(t, static_cast<Index>(frame_rows.size()) * p, cfg.d_model));
  }

  std::vector<std::pair<int, Index>> picks;
  picks.reserve(static_cast<size_t>(length));
  Index next_text = 0, next_frame = 0;
  for (const Item& it : input.items) {
    if (it.kind == ItemKind::Token) {
      picks.emplace_back(text_src, next_text++);
    } else {
      for (int s = 0; s < p; ++s) picks.emplace_back(frame_src, next_frame++);
    }
  }
  std::vector<int> positions(static_cast<size_t>(length));
  for (Index i = 0; i < length; ++i) positions[static_cast<size_t>(i)] = static_cast<int>(position_offset + i);

  NodeId x = g.add(g.gather_rows(sources, std::move(picks)), g.embedding(leaves.position_embedding, positions));

  const Index dh = cfg.head_dim();
  const Scalar attn_scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  for (const auto& layer : leaves.layers) {
    NodeId n1 = g.rms_norm(x, layer.attn_norm);
    NodeId q = g.scale(g.matmul(n1, layer.wq), attn_scale);
    NodeId k = g.matmul(n1, layer.wk);
    NodeId v = g.matmul(n1, layer.wv);
    std::vector<NodeId> heads;
    for (int h = 0; h < cfg.n_heads; ++h) {
      NodeId qh = g.slice_cols(q, h * dh, dh);
      NodeId kh = g.slice_cols(k, h * dh, dh);
      NodeId vh = g.slice_cols(v, h * dh, dh);
      NodeId scores = g.matmul(qh, kh, /*transpose_b=*/true, /*causal=*/true);
      NodeId probs = g.softmax_rows(scores, /*causal=*/true);
      heads.push_back(g.matmul(probs, vh, /*transpose_b=*/false, /*causal=*/true));
    }
    x = g.add(x, g.matmul(g.concat_cols(heads), layer.wo));
    NodeId n2 = g.rms_norm(x, layer.mlp_norm);
    x = g.add(x, g.matmul(g.silu(g.matmul(n2, layer.w1)), layer.w2));
  }
  return g.matmul(g.rms_norm(x, leaves.final_norm), leaves.token_embedding, /*transpose_b=*/true);
}

/// Logits for every expanded position, recomputed from scratch.
template <typename Scalar>
MatrixX<Scalar> forward_full(const ModelParams<Scalar>& params, const ModelInput<Scalar>& input) {
  Graph<Scalar> g;
  // Forward only reads parameter values.
  auto& mutable_params = const_cast<ModelParams<Scalar>&>(params);
  ParamLeaves<Scalar> leaves = bind_parameters(g, mutable_params);
  NodeId logits = build_logits(g, leaves, params.config, input);
  g.forward();
  return g.value(logits);
}

// ---------------------------------------------------------------------------
// Incremental route: direct kernels over a growing key/value cache.

/// p x d frame tokens for one feature vector of dimension c.
template <typename Scalar>
MatrixX<Scalar> embed_frame(const ModelParams<Scalar>& params, const Eigen::Ref<const RowVectorX<Scalar>>& feature) {
  const ModelConfig& cfg = params.config;
  if (feature.size() != cfg.frame_feature_dim) {
    throw ShapeError("embed_frame: feature has " + std::to_string(feature.size()) + " dims, expected " +
                     std::to_string(cfg.frame_feature_dim));
  }
  RowVectorX<Scalar> h = feature * params.proj_w1.value + params.proj_b1.value;
  h = h.unaryExpr([](Scalar x) { return x / (Scalar(1) + std::exp(-x)); });
  RowVectorX<Scalar> t = h * params.proj_w2.value + params.proj_b2.value;
  return Eigen::Map<const MatrixX<Scalar>>(t.data(), cfg.tokens_per_frame, cfg.d_model);
}

/// Per-layer key/value history. Rows below length() never change once written.
template <typename Scalar>
class KVCache {
 public:
  KVCache() = default;
  explicit KVCache(const ModelConfig& cfg)
      : max_context_(cfg.max_context), keys_(static_cast<size_t>(cfg.n_layers)),
        values_(static_cast<size_t>(cfg.n_layers)) {
    for (size_t l = 0; l < keys_.size(); ++l) {
      keys_[l].resize(0, cfg.d_model);
      values_[l].resize(0, cfg.d_model);
    }
  }

  Index length() const { return length_; }
  Index max_context() const { return max_context_; }
  int n_layers() const { return static_cast<int>(keys_.size()); }

  auto keys(int layer) const { return keys_[static_cast<size_t>(layer)].topRows(length_); }
  auto values(int layer) const { return values_[static_cast<size_t>(layer)].topRows(length_); }

  /// Forgets every position at or after `length`.
  void truncate(Index length) {
    if (length < 0 || length > length_) throw ShapeError("KVCache::truncate beyond current length");
    length_ = length;
  }

 private:
  template <typename S>
  friend MatrixX<S> forward_embedded(const ModelParams<S>&, KVCache<S>&, const MatrixX<S>&);

  void reserve(Index rows) {
    for (size_t l = 0; l < keys_.size(); ++l) {
      if (keys_[l].rows() >= rows) continue;
      const Index grown = std::max<Index>(rows, std::max<Index>(64, keys_[l].rows() * 2));
      keys_[l].conservativeResize(grown, Eigen::NoChange);
      values_[l].conservativeResize(grown, Eigen::NoChange);
    }
  }

  Index max_context_ = 0;
  Index length_ = 0;
  std::vector<MatrixX<Scalar>> keys_;
  std::vector<MatrixX<Scalar>> values_;
};

/// Runs already-embedded rows (token embeddings or frame tokens, without
/// position embeddings) through the decoder, extending the cache. Returns one
/// logits row per new position.
template <typename Scalar>
MatrixX<Scalar> forward_embedded(const ModelParams<Scalar>& params, KVCache<Scalar>& cache,
                                 const MatrixX<Scalar>& rows) {
  const ModelConfig& cfg = params.config;
  const Index n = rows.rows();
  if (n == 0) return MatrixX<Scalar>(0, cfg.vocab_size);
  if (rows.cols() != cfg.d_model) throw ShapeError("forward_embedded: row width mismatch");
  const Index start = cache.length_;
  if (start + n > cfg.max_context) {
    throw ContextOverflowError("cache of " + std::to_string(start) + " + " + std::to_string(n) +
                               " positions exceeds max_context " + std::to_string(cfg.max_context));
  }
  cache.reserve(start + n);

  auto rms = [](const MatrixX<Scalar>& x, const MatrixX<Scalar>& gain) {
    MatrixX<Scalar> y(x.rows(), x.cols());
    for (Index r = 0; r < x.rows(); ++r) {
      const Scalar inv = Scalar(1) / std::sqrt(x.row(r).squaredNorm() / static_cast<Scalar>(x.cols()) + Scalar(1e-6));
      y.row(r) = (x.row(r) * inv).cwiseProduct(gain.row(0));
    }
    return y;
  };

  MatrixX<Scalar> x = rows + params.position_embedding.value.middleRows(start, n);
  const Index dh = cfg.head_dim();
  const Scalar attn_scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  for (size_t li = 0; li < params.layers.size(); ++li) {
    const auto& layer = params.layers[li];
    MatrixX<Scalar> h = rms(x, layer.attn_norm.value);
    auto& K = cache.keys_[li];
    auto& V = cache.values_[li];
    MatrixX<Scalar> q = (h * layer.wq.value) * attn_scale;
    K.middleRows(start, n).noalias() = h * layer.wk.value;
    V.middleRows(start, n).noalias() = h * layer.wv.value;
    const Index total = start + n;
    MatrixX<Scalar> attn(n, cfg.d_model);
    for (int head = 0; head < cfg.n_heads; ++head) {
      const Index c0 = head * dh;
      MatrixX<Scalar> scores = q.middleCols(c0, dh) * K.block(0, c0, total, dh).transpose();
      for (Index r = 0; r < n; ++r) {
        const Index width = start + r + 1;
        auto row = scores.row(r);
        const Scalar m = row.head(width).maxCoeff();
        row.head(width) = (row.head(width).array() - m).exp().matrix();
        row.head(width) /= row.head(width).sum();
        row.tail(total - width).setZero();
      }
      attn.middleCols(c0, dh).noalias() = scores * V.block(0, c0, total, dh);
    }
    x += attn * layer.wo.value;
    MatrixX<Scalar> m = rms(x, layer.mlp_norm.value) * layer.w1.value;
    m = m.unaryExpr([](Scalar v) { return v / (Scalar(1) + std::exp(-v)); });
    x += m * layer.w2.value;
  }
  cache.length_ = start + n;
  return rms(x, params.final_norm.value) * params.token_embedding.value.transpose();
}

/// Token embeddings for text items and projector output for frames, in order.
template <typename Scalar>
MatrixX<Scalar> embed_items(const ModelParams<Scalar>& params, const ModelInput<Scalar>& input) {
  const ModelConfig& cfg = params.config;
  const int p = cfg.tokens_per_frame;
  MatrixX<Scalar> rows(expanded_length(input.items, p), cfg.d_model);
  Index r = 0;
  for (const Item& it : input.items) {
    if (it.kind == ItemKind::Token) {
      if (it.value < 0 || it.value >= cfg.vocab_size) throw ShapeError("token id out of range");
      rows.row(r++) = params.token_embedding.value.row(it.value);
    } else {
      if (it.value < 0 || it.value >= input.frames.rows()) throw ShapeError("frame reference out of range");
      rows.middleRows(r, p) = embed_frame<Scalar>(params, input.frames.row(it.value));
      r += p;
    }
  }
  return rows;
}

/// Logits for the new positions; the cache grows by their expanded length.
template <typename Scalar>
MatrixX<Scalar> forward_step(const ModelParams<Scalar>& params, KVCache<Scalar>& cache,
                             const ModelInput<Scalar>& input) {
  const Index n = expanded_length(input.items, params.config.tokens_per_frame);
  if (cache.length() + n > params.config.max_context) {
    throw ContextOverflowError("cache of " + std::to_string(cache.length()) + " + " + std::to_string(n) +
                               " positions exceeds max_context " + std::to_string(params.config.max_context));
  }
  return forward_embedded(params, cache, embed_items(params, input));
}

/// Row-wise softmax of logits.
template <typename Scalar>
VectorX<Scalar> softmax(const Eigen::Ref<const RowVectorX<Scalar>>& logits) {
  const Scalar m = logits.maxCoeff();
  VectorX<Scalar> p = (logits.array() - m).exp().matrix().transpose();
  return p / p.sum();
}

}  // namespace live
