#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "live/data.hpp"
#include "live/graph.hpp"
#include "live/model.hpp"
#include "live/vocab.hpp"

namespace live {

/// streaming: LM loss on responses plus the silence loss on frames.
/// interleaved: the same layout with LM loss only.
/// per_frame: every silent frame is followed by a templated EOS-answer turn.
enum class Scheme : uint8_t { Streaming, Interleaved, PerFrame };

const char* scheme_name(Scheme scheme);
Scheme parse_scheme(const std::string& name);  // throws ConfigError

/// Expanded sequence with one entry per model position.
struct AssembledSequence {
  Scheme scheme = Scheme::Streaming;
  int tokens_per_frame = 1;
  std::vector<Item> items;            // model input; frames index rows of the stream's feature matrix
  std::vector<int> tokens;            // token id per position, token::kFrame on frame slots
  std::vector<int> frame_index;       // stream frame per position, -1 on text
  std::vector<uint8_t> frame_last;    // last of a frame's p slots
  std::vector<uint8_t> text_target;   // position holds a supervised response token
  std::vector<Index> item_start;      // first position of each item

  Index length() const { return static_cast<Index>(tokens.size()); }
};

/// Tokens of the fixed system prompt, including the role marker.
std::vector<int> system_prompt_tokens(const Vocabulary& vocab);

/// Layout shared by every scheme: system prompt, then per frame its p slots,
/// that frame's user turns (role + words), then its assistant turns
/// (role + words + turn EOS). per_frame additionally appends the ten-token
/// silent turn after every frame without an assistant turn.
AssembledSequence assemble(const StreamSample& sample, const Vocabulary& vocab, int tokens_per_frame,
                           Scheme scheme = Scheme::Streaming, Index max_context = 0);

/// Per-position loss indicators, defined on the predicting position:
/// l[j] = 1 iff position j+1 holds a supervised response token;
/// f[j] = 1 iff j is frame-last and l[j] = 0 (streaming scheme only).
struct LossMask {
  std::vector<uint8_t> l;
  std::vector<uint8_t> f;

  /// Positions carrying at least one active term.
  Index active() const;
};

LossMask compute_masks(const AssembledSequence& seq);

/// Per-position targets and weights for a cross-entropy over all positions:
/// the next token where l is set, the silence token with weight w where f is
/// set, -1 elsewhere.
struct LossTargets {
  std::vector<int> targets;
  std::vector<double> weights;
  std::vector<uint8_t> is_eos;  // target came from f
  double normalizer = 0;        // active position count
};

LossTargets loss_targets(const AssembledSequence& seq, const LossMask& mask, const Vocabulary& vocab, double w);

struct LossParts {
  double lm = 0;     // sum over l positions / N
  double eos = 0;    // sum over f positions / N, unweighted
  double total = 0;  // lm + w * eos
  Index active = 0;
};

/// Loss from full logits (one row per position). Zero when nothing is active.
template <typename Scalar>
LossParts live_loss(const MatrixX<Scalar>& logits, const AssembledSequence& seq, const LossMask& mask,
                    const Vocabulary& vocab, double w) {
  if (logits.rows() != seq.length() || static_cast<Index>(mask.l.size()) != seq.length() ||
      static_cast<Index>(mask.f.size()) != seq.length()) {
    throw ShapeError("live_loss: " + std::to_string(logits.rows()) + " logit rows for " +
                     std::to_string(seq.length()) + " positions and " + std::to_string(mask.l.size()) + " mask entries");
  }
  const LossTargets t = loss_targets(seq, mask, vocab, w);
  LossParts parts;
  parts.active = static_cast<Index>(t.normalizer);
  if (parts.active == 0) return parts;
  double lm = 0, eos = 0;
  for (Index j = 0; j < seq.length(); ++j) {
    const int target = t.targets[static_cast<size_t>(j)];
    if (target < 0) continue;
    const auto row = logits.row(j).template cast<double>();
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    const double nll = lse - row(target);
    (t.is_eos[static_cast<size_t>(j)] ? eos : lm) += nll;
  }
  parts.lm = lm / t.normalizer;
  parts.eos = eos / t.normalizer;
  parts.total = parts.lm + w * parts.eos;
  return parts;
}

/// Model input over positions [first_item, last_item) of an assembly.
template <typename Scalar>
ModelInput<Scalar> slice_input(const AssembledSequence& seq, const MatrixX<Scalar>& features, size_t first_item,
                               size_t last_item) {
  ModelInput<Scalar> in;
  in.items.assign(seq.items.begin() + static_cast<long>(first_item), seq.items.begin() + static_cast<long>(last_item));
  in.frames = features;
  return in;
}

/// Item ranges of at most max_positions positions each (a single frame
/// larger than the budget still gets its own chunk).
std::vector<std::pair<size_t, size_t>> chunk_items(const AssembledSequence& seq, Index max_positions);

/// Builds the weighted cross-entropy over the positions of item range
/// [first, last) and returns the loss node. The normalizer is the active
/// count of the whole sequence so chunk losses add up to the full loss.
template <typename Scalar>
NodeId build_chunk_loss(Graph<Scalar>& g, const ParamLeaves<Scalar>& leaves, const ModelConfig& cfg,
                        const AssembledSequence& seq, const LossTargets& targets, const MatrixX<Scalar>& features,
                        size_t first, size_t last) {
  const Index p0 = seq.item_start[first];
  const Index p1 = last < seq.items.size() ? seq.item_start[last] : seq.length();
  ModelInput<Scalar> in = slice_input(seq, features, first, last);
  NodeId logits = build_logits(g, leaves, cfg, in, p0);
  std::vector<int> tg(targets.targets.begin() + p0, targets.targets.begin() + p1);
  std::vector<Scalar> wt;
  wt.reserve(tg.size());
  for (Index j = p0; j < p1; ++j) wt.push_back(static_cast<Scalar>(targets.weights[static_cast<size_t>(j)]));
  return g.cross_entropy(logits, std::move(tg), std::move(wt), static_cast<Scalar>(std::max(1.0, targets.normalizer)));
}

/// Closed-form length of an assembly (no token materialization).
Index assembled_length(const StreamSample& sample, const Vocabulary& vocab, int tokens_per_frame, Scheme scheme);

}  // namespace live
