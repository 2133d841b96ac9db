#include "live/assemble.hpp"

#include "live/catalog.hpp"
#include "live/error.hpp"

namespace live {

const char* scheme_name(Scheme scheme) {
  switch (scheme) {
    case Scheme::Streaming: return "streaming";
    case Scheme::Interleaved: return "interleaved";
    case Scheme::PerFrame: return "per_frame";
  }
  return "?";
}

Scheme parse_scheme(const std::string& name) {
  if (name == "streaming") return Scheme::Streaming;
  if (name == "interleaved") return Scheme::Interleaved;
  if (name == "per_frame") return Scheme::PerFrame;
  throw ConfigError("unknown scheme \"" + name + "\" (expected streaming, interleaved or per_frame)");
}

std::vector<int> system_prompt_tokens(const Vocabulary& vocab) {
  std::vector<int> ids = {token::kSystem};
  for (int id : vocab.encode(kSystemPrompt)) ids.push_back(id);
  return ids;
}

namespace {

struct Builder {
  AssembledSequence& seq;

  void token(int id, bool target) {
    seq.item_start.push_back(seq.length());
    seq.items.push_back(Item::token(id));
    seq.tokens.push_back(id);
    seq.frame_index.push_back(-1);
    seq.frame_last.push_back(0);
    seq.text_target.push_back(target ? 1 : 0);
  }

  void frame(int f) {
    seq.item_start.push_back(seq.length());
    seq.items.push_back(Item::frame(f));
    for (int s = 0; s < seq.tokens_per_frame; ++s) {
      seq.tokens.push_back(token::kFrame);
      seq.frame_index.push_back(f);
      seq.frame_last.push_back(s + 1 == seq.tokens_per_frame ? 1 : 0);
      seq.text_target.push_back(0);
    }
  }
};

}  // namespace

AssembledSequence assemble(const StreamSample& sample, const Vocabulary& vocab, int tokens_per_frame, Scheme scheme,
                           Index max_context) {
  if (tokens_per_frame < 1) throw ConfigError("tokens_per_frame must be at least 1");
  AssembledSequence seq;
  seq.scheme = scheme;
  seq.tokens_per_frame = tokens_per_frame;
  Builder b{seq};
  for (int id : system_prompt_tokens(vocab)) b.token(id, false);

  const std::vector<int> silent_turn = vocab.per_frame_silent_turn();
  size_t next = 0;
  for (int f = 0; f < sample.num_frames; ++f) {
    b.frame(f);
    size_t end = next;
    while (end < sample.turns.size() && sample.turns[end].frame == f) ++end;
    bool spoke = false;
    for (Role role : {Role::User, Role::Assistant}) {
      for (size_t i = next; i < end; ++i) {
        const Turn& t = sample.turns[i];
        if (t.role != role) continue;
        const bool target = role == Role::Assistant;
        b.token(target ? token::kAssistant : token::kUser, target);
        for (int id : vocab.encode(t.text)) b.token(id, target);
        if (target) {
          b.token(token::kTurnEos, true);
          spoke = true;
        }
      }
    }
    if (end < sample.turns.size() && sample.turns[end].frame < f) {
      throw FormatError("turns are not sorted by frame");
    }
    next = end;
    if (scheme == Scheme::PerFrame && !spoke) {
      // role marker, silent answer and its EOS carry loss; the rest is template
      for (size_t k = 0; k < silent_turn.size(); ++k) b.token(silent_turn[k], k < 3);
    }
  }
  if (next != sample.turns.size()) throw FormatError("turn at frame beyond num_frames");
  if (max_context > 0 && seq.length() > max_context) {
    throw ContextOverflowError(std::string(scheme_name(scheme)) + " assembly of " + std::to_string(seq.length()) +
                               " positions exceeds max_context " + std::to_string(max_context));
  }
  return seq;
}

Index assembled_length(const StreamSample& sample, const Vocabulary& vocab, int tokens_per_frame, Scheme scheme) {
  Index n = static_cast<Index>(system_prompt_tokens(vocab).size()) +
            static_cast<Index>(sample.num_frames) * tokens_per_frame;
  std::vector<uint8_t> spoke(static_cast<size_t>(sample.num_frames), 0);
  for (const Turn& t : sample.turns) {
    n += 1 + static_cast<Index>(split_words(t.text).size()) + (t.role == Role::Assistant ? 1 : 0);
    if (t.role == Role::Assistant) spoke[static_cast<size_t>(t.frame)] = 1;
  }
  if (scheme == Scheme::PerFrame) {
    Index silent = 0;
    for (uint8_t s : spoke) silent += s ? 0 : 1;
    n += silent * static_cast<Index>(vocab.per_frame_silent_turn().size());
  }
  return n;
}

Index LossMask::active() const {
  Index n = 0;
  for (size_t j = 0; j < l.size(); ++j) n += (l[j] || f[j]) ? 1 : 0;
  return n;
}

LossMask compute_masks(const AssembledSequence& seq) {
  const size_t n = seq.tokens.size();
  LossMask mask;
  mask.l.assign(n, 0);
  mask.f.assign(n, 0);
  for (size_t j = 0; j + 1 < n; ++j) mask.l[j] = seq.text_target[j + 1];
  if (seq.scheme == Scheme::Streaming) {
    for (size_t j = 0; j < n; ++j) mask.f[j] = seq.frame_last[j] && !mask.l[j] ? 1 : 0;
  }
  return mask;
}

LossTargets loss_targets(const AssembledSequence& seq, const LossMask& mask, const Vocabulary& vocab, double w) {
  if (w < 0) throw ConfigError("streaming loss weight must be non-negative");
  const size_t n = seq.tokens.size();
  LossTargets t;
  t.targets.assign(n, -1);
  t.weights.assign(n, 0.0);
  t.is_eos.assign(n, 0);
  for (size_t j = 0; j < n; ++j) {
    if (mask.l[j]) {
      t.targets[j] = seq.tokens[j + 1];
      t.weights[j] = 1.0;
      t.normalizer += 1;
    } else if (mask.f[j]) {
      t.targets[j] = vocab.stream_eos();
      t.weights[j] = w;
      t.is_eos[j] = 1;
      t.normalizer += 1;
    }
  }
  return t;
}

std::vector<std::pair<size_t, size_t>> chunk_items(const AssembledSequence& seq, Index max_positions) {
  std::vector<std::pair<size_t, size_t>> chunks;
  if (max_positions <= 0) {
    if (!seq.items.empty()) chunks.emplace_back(0, seq.items.size());
    return chunks;
  }
  auto item_end = [&](size_t i) { return i + 1 < seq.items.size() ? seq.item_start[i + 1] : seq.length(); };
  size_t first = 0;
  while (first < seq.items.size()) {
    size_t last = first + 1;
    while (last < seq.items.size() && item_end(last) - seq.item_start[first] <= max_positions) ++last;
    chunks.emplace_back(first, last);
    first = last;
  }
  return chunks;
}

}  // namespace live
