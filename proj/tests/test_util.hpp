#pragma once

#include <array>
#include <cstring>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "live/data.hpp"
#include "live/engine.hpp"
#include "live/error.hpp"
#include "live/model.hpp"
#include "live/vocab.hpp"

namespace live::testing {

/// Small model with every tensor randomized (including the zero-initialized
/// ones) so that gradients and attention patterns are non-degenerate.
template <typename Scalar>
ModelParams<Scalar> random_model(ModelConfig cfg, uint64_t seed, double stddev = 0.3) {
  ModelParams<Scalar> params = init_model<Scalar>(cfg, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, stddev);
  for (auto& [name, t] : params.named_tensors()) {
    t->value = t->value.unaryExpr([&](Scalar v) { return v + static_cast<Scalar>(normal(rng)); });
  }
  return params;
}

inline ModelConfig tiny_config(int p = 1, int max_context = 64) {
  ModelConfig cfg = ModelConfig::defaults();
  cfg.d_model = 32;
  cfg.n_layers = 2;
  cfg.n_heads = 4;
  cfg.max_context = max_context;
  cfg.tokens_per_frame = p;
  cfg.frame_feature_dim = 6;
  return cfg;
}

/// Random interleaving of word tokens and frames.
template <typename Scalar>
ModelInput<Scalar> random_input(const ModelConfig& cfg, Index max_positions, std::mt19937_64& rng) {
  ModelInput<Scalar> in;
  std::uniform_int_distribution<int> word(token::kFirstWordId, cfg.vocab_size - 1);
  std::bernoulli_distribution is_frame(0.4);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> feats;
  Index used = 0;
  while (true) {
    if (is_frame(rng) && used + cfg.tokens_per_frame <= max_positions) {
      in.items.push_back(Item::frame(static_cast<int>(feats.size())));
      feats.emplace_back();
      for (int c = 0; c < cfg.frame_feature_dim; ++c) feats.back().push_back(normal(rng));
      used += cfg.tokens_per_frame;
    } else if (used + 1 <= max_positions) {
      in.items.push_back(Item::token(word(rng)));
      used += 1;
    } else {
      break;
    }
  }
  in.frames.resize(static_cast<Index>(feats.size()), cfg.frame_feature_dim);
  for (size_t r = 0; r < feats.size(); ++r)
    for (int c = 0; c < cfg.frame_feature_dim; ++c) in.frames(static_cast<Index>(r), c) = static_cast<Scalar>(feats[r][static_cast<size_t>(c)]);
  return in;
}

template <typename Derived>
bool bitwise_equal(const Eigen::DenseBase<Derived>& a, const Eigen::DenseBase<Derived>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  const auto& ad = a.derived();
  const auto& bd = b.derived();
  for (Index r = 0; r < a.rows(); ++r)
    for (Index c = 0; c < a.cols(); ++c)
      if (std::memcmp(&ad.coeffRef(r, c), &bd.coeffRef(r, c), sizeof(typename Derived::Scalar)) != 0) return false;
  return true;
}

/// Hand-built video: segments given as (activity, start, end).
inline AnnotatedVideo make_video(int num_frames, const std::vector<std::array<int, 3>>& segs, double fps = 2.0) {
  AnnotatedVideo v;
  v.fps = fps;
  v.num_frames = num_frames;
  v.states.assign(static_cast<size_t>(num_frames), kBackgroundState);
  for (auto [a, s, e] : segs) {
    v.segments.push_back({a, activity_catalog()[static_cast<size_t>(a)].narration(), s, e});
    for (int f = s; f < e; ++f) v.states[static_cast<size_t>(f)] = a;
  }
  return v;
}

/// Mask oracle that walks the turn list directly: positions are counted per
/// event, response tokens are marked, then l and f follow their definitions.
struct ScannedMasks {
  std::vector<uint8_t> l, f, frame_last;
};

inline ScannedMasks scan_masks(const StreamSample& s, int p, bool streaming, size_t system_len) {
  std::vector<uint8_t> response(system_len, 0), last(system_len, 0);
  auto words = [](const std::string& t) { return split_words(t).size(); };
  for (int fr = 0; fr < s.num_frames; ++fr) {
    for (int k = 0; k < p; ++k) {
      response.push_back(0);
      last.push_back(k == p - 1);
    }
    for (const Turn& t : s.turns)
      if (t.frame == fr && t.role == Role::User)
        for (size_t k = 0; k < 1 + words(t.text); ++k) response.push_back(0), last.push_back(0);
    for (const Turn& t : s.turns)
      if (t.frame == fr && t.role == Role::Assistant)
        for (size_t k = 0; k < 2 + words(t.text); ++k) response.push_back(1), last.push_back(0);
  }
  ScannedMasks m;
  m.frame_last = last;
  m.l.assign(response.size(), 0);
  m.f.assign(response.size(), 0);
  for (size_t j = 0; j + 1 < response.size(); ++j) m.l[j] = response[j + 1];
  for (size_t j = 0; j < response.size(); ++j) m.f[j] = streaming && last[j] && !m.l[j];
  return m;
}

/// LanguageStream whose next-token distribution is a scripted function of
/// the history. Each history entry is a token id, or -(row + 1) for a frame
/// slot.
class ScriptedStream final : public LanguageStream {
 public:
  using Rule = std::function<RowVectorX<double>(const std::vector<int>& history)>;

  ScriptedStream(int vocab_size, int p, Index max_context, Rule rule)
      : vocab_size_(vocab_size), p_(p), max_context_(max_context), rule_(std::move(rule)) {}

  int tokens_per_frame() const override { return p_; }
  Index max_context() const override { return max_context_; }
  Index length() const override { return static_cast<Index>(history_.size()); }

  MatrixX<double> append(const std::vector<Item>& items) override {
    std::vector<RowVectorX<double>> out;
    for (const Item& it : items) {
      const int n = it.kind == ItemKind::Frame ? p_ : 1;
      for (int k = 0; k < n; ++k) {
        history_.push_back(it.kind == ItemKind::Frame ? -(it.value + 1) : it.value);
        if (length() > max_context_) throw ContextOverflowError("scripted stream overflow");
        RowVectorX<double> probs = rule_(history_);
        out.push_back(probs.array().log());
      }
    }
    MatrixX<double> m(static_cast<Index>(out.size()), vocab_size_);
    for (size_t r = 0; r < out.size(); ++r) m.row(static_cast<Index>(r)) = out[r];
    return m;
  }

  void truncate(Index length) override { history_.resize(static_cast<size_t>(length)); }

  const std::vector<int>& history() const { return history_; }

 private:
  int vocab_size_;
  int p_;
  Index max_context_;
  Rule rule_;
  std::vector<int> history_;
};

/// Distribution with the given masses; the remainder is spread evenly over
/// every other token.
inline RowVectorX<double> dist(int vocab_size, const std::vector<std::pair<int, double>>& mass) {
  RowVectorX<double> p(vocab_size);
  double used = 0;
  for (auto [id, m] : mass) used += m;
  const double rest = (1.0 - used) / static_cast<double>(vocab_size - static_cast<int>(mass.size()));
  p.setConstant(rest);
  for (auto [id, m] : mass) p(id) = m;
  return p;
}

inline RowVectorX<double> one_hot(int vocab_size, int id) {
  RowVectorX<double> p = RowVectorX<double>::Zero(vocab_size);
  p(id) = 1.0;
  return p;
}

}  // namespace live::testing
