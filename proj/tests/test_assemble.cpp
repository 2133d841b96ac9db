#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "live/assemble.hpp"
#include "live/error.hpp"
#include "test_util.hpp"

using namespace live;

namespace {

const Vocabulary& vocab() {
  static const Vocabulary v = Vocabulary::standard();
  return v;
}

size_t system_len() { return system_prompt_tokens(vocab()).size(); }

StreamSample tiny_sample(int frames, std::vector<Turn> turns) {
  StreamSample s;
  s.num_frames = frames;
  s.states.assign(static_cast<size_t>(frames), kBackgroundState);
  s.turns = std::move(turns);
  return s;
}

std::vector<StreamSample> mixed_samples(int count, uint64_t seed) {
  WorldConfig w;
  w.num_frames = 120;
  std::vector<StreamSample> out;
  for (int i = 0; i < count; ++i) {
    auto v = gen_world(w, derive_seed(seed, static_cast<uint64_t>(i)));
    if (i % 2 == 0) {
      out.push_back(make_narration_stream(v));
    } else {
      out.push_back(insert_queries(v, synthesize_dialogue(v, default_templates(), static_cast<uint64_t>(i)), 3,
                                   static_cast<uint64_t>(i)));
    }
  }
  return out;
}

}  // namespace

TEST_CASE("assembled length follows the layout arithmetic") {
  auto s = tiny_sample(4, {{Role::User, 0, "please narrate what you do in real time"},
                           {Role::Assistant, 1, "you wash the tomato"},
                           {Role::Assistant, 3, "you stir the soup"}});
  for (int p : {1, 3}) {
    auto seq = assemble(s, vocab(), p);
    // system + F*p + user (role + 8 words) + 2 * (role + 4 words + eos)
    CHECK(seq.length() == static_cast<Index>(system_len()) + 4 * p + 9 + 2 * 6);
    CHECK(seq.length() == assembled_length(s, vocab(), p, Scheme::Streaming));
    CHECK(expanded_length(seq.items, p) == seq.length());
  }
  auto stream = assemble(s, vocab(), 1, Scheme::Streaming);
  auto inter = assemble(s, vocab(), 1, Scheme::Interleaved);
  auto per = assemble(s, vocab(), 1, Scheme::PerFrame);
  CHECK(stream.length() == inter.length());
  CHECK(stream.tokens == inter.tokens);
  CHECK(per.length() == stream.length() + 2 * 10);
  CHECK(per.length() == assembled_length(s, vocab(), 1, Scheme::PerFrame));
  CHECK_THROWS_AS(assemble(s, vocab(), 1, Scheme::PerFrame, stream.length()), ContextOverflowError);
  CHECK_THROWS_AS(assemble(tiny_sample(1, {{Role::User, 0, "zebra"}}), vocab(), 1), UnknownTokenError);
}

TEST_CASE("per-frame assembly of a silent stream") {
  auto s = tiny_sample(600, {});
  auto per = assemble(s, vocab(), 1, Scheme::PerFrame);
  int answers = 0;
  for (size_t j = 0; j + 1 < per.tokens.size(); ++j)
    answers += per.tokens[j] == token::kAssistant && per.tokens[j + 1] == vocab().stream_eos();
  CHECK(answers == 600);
  auto mask = compute_masks(per);
  for (uint8_t f : mask.f) CHECK(f == 0);
  CHECK(mask.active() == 600 * 3);
}

TEST_CASE("mask definition trace with p = 1") {
  // [F][F][F][A: "you"]
  auto s = tiny_sample(3, {{Role::Assistant, 2, "you"}});
  auto seq = assemble(s, vocab(), 1);
  auto m = compute_masks(seq);
  const size_t S = system_len();
  REQUIRE(seq.length() == static_cast<Index>(S + 6));
  CHECK(m.f[S] == 1);
  CHECK(m.f[S + 1] == 1);
  CHECK(m.f[S + 2] == 0);
  CHECK(m.l[S + 2] == 1);  // predicts the role marker
  CHECK(m.l[S + 3] == 1);  // predicts "you"
  CHECK(m.l[S + 4] == 1);  // predicts the turn EOS
  CHECK(m.l[S + 5] == 0);
  for (size_t j = 0; j < S; ++j) CHECK((m.l[j] | m.f[j]) == 0);
  CHECK(seq.tokens[S + 5] == token::kTurnEos);

  auto inter = compute_masks(assemble(s, vocab(), 1, Scheme::Interleaved));
  for (uint8_t f : inter.f) CHECK(f == 0);
  CHECK(inter.l == m.l);
}

TEST_CASE("silent streams and multi-slot frames") {
  auto silent = compute_masks(assemble(tiny_sample(5, {}), vocab(), 1));
  const size_t S = system_len();
  for (size_t j = 0; j < silent.l.size(); ++j) {
    CHECK(silent.l[j] == 0);
    CHECK(silent.f[j] == (j >= S ? 1 : 0));
  }
  auto seq = assemble(tiny_sample(4, {{Role::Assistant, 3, "you"}}), vocab(), 3);
  auto m = compute_masks(seq);
  for (Index j = 0; j < seq.length(); ++j) {
    if (m.f[static_cast<size_t>(j)]) {
      CHECK(seq.frame_last[static_cast<size_t>(j)] == 1);
      CHECK((j - static_cast<Index>(S)) % 3 == 2);
    }
  }
}

TEST_CASE("masks agree with the event-list scanner") {
  for (const auto& s : mixed_samples(40, 77)) {
    for (int p : {1, 2}) {
      auto seq = assemble(s, vocab(), p);
      auto m = compute_masks(seq);
      auto oracle = testing::scan_masks(s, p, true, system_len());
      CHECK(m.l == oracle.l);
      CHECK(m.f == oracle.f);
      CHECK(seq.frame_last == oracle.frame_last);
      for (size_t j = 0; j < m.f.size(); ++j) {
        CHECK(!(m.l[j] && m.f[j]));
        if (m.f[j]) CHECK((seq.frame_last[j] && (j + 1 == m.f.size() || !seq.text_target[j + 1])));
      }
      for (int id : seq.tokens) CHECK(id != token::kStreamEos);
    }
  }
}

TEST_CASE("token accounting across schemes") {
  for (const auto& s : mixed_samples(20, 5)) {
    const Index st = assemble(s, vocab(), 1, Scheme::Streaming).length();
    const Index in = assemble(s, vocab(), 1, Scheme::Interleaved).length();
    const Index pf = assemble(s, vocab(), 1, Scheme::PerFrame).length();
    std::set<int> spoke;
    for (const Turn& t : s.turns)
      if (t.role == Role::Assistant) spoke.insert(t.frame);
    const Index silent = s.num_frames - static_cast<Index>(spoke.size());
    CHECK(st == in);
    CHECK(pf == st + 10 * silent);
    if (silent > 0) CHECK(pf > st);
  }
}

TEST_CASE("live loss values") {
  const int V = vocab().size();
  auto silent = tiny_sample(2, {});
  auto seq = assemble(silent, vocab(), 1);
  auto mask = compute_masks(seq);
  MatrixX<double> logits = MatrixX<double>::Zero(seq.length(), V);

  auto interleaved = assemble(silent, vocab(), 1, Scheme::Interleaved);
  auto parts0 = live_loss(logits, interleaved, compute_masks(interleaved), vocab(), 0.0);
  CHECK(parts0.total == 0.0);
  CHECK(parts0.active == 0);

  // one active f position, uniform over 16 classes including the silence token
  auto one = assemble(tiny_sample(1, {}), vocab(), 1);
  MatrixX<double> l16 = MatrixX<double>::Constant(one.length(), V, -1e4);
  l16.leftCols(16).setZero();
  for (double w : {1.0, 0.5, 2.0}) {
    auto parts = live_loss(l16, one, compute_masks(one), vocab(), w);
    CHECK(parts.active == 1);
    CHECK(parts.total == doctest::Approx(w * std::log(16.0)).epsilon(1e-12));
  }
}

TEST_CASE("four-position hand example") {
  // system prompt + [F][A:"you"] gives positions ... F, A, you, EOS; take the
  // last four and give them explicit logits over a 4-class slice.
  auto s = tiny_sample(1, {{Role::Assistant, 0, "you"}});
  auto seq = assemble(s, vocab(), 1);
  auto m = compute_masks(seq);
  const int V = vocab().size();
  const int you = vocab().id("you");
  MatrixX<double> logits = MatrixX<double>::Constant(seq.length(), V, -1e4);
  const Index S = static_cast<Index>(system_len());
  const int cls[4] = {token::kTurnEos, token::kStreamEos, token::kAssistant, you};
  const double table[4][4] = {{0.1, 0.2, 1.5, -0.3}, {0.0, -1.0, 0.3, 2.0}, {0.5, 0.5, -0.5, 1.0}, {1.2, 0.0, 0.0, 0.0}};
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) logits(S + r, cls[c]) = table[r][c];
  // active: F predicts ASSISTANT (col 2), A predicts you (col 3), you predicts EOS (col 0)
  auto nll = [&](int r, int c) {
    double z = 0;
    for (int k = 0; k < 4; ++k) z += std::exp(table[r][k]);
    return -std::log(std::exp(table[r][c]) / z);
  };
  const double expected = (nll(0, 2) + nll(1, 3) + nll(2, 0)) / 3.0;
  auto parts = live_loss(logits, seq, m, vocab(), 1.0);
  CHECK(parts.active == 3);
  CHECK(std::abs(parts.total - expected) < 1e-6);
  CHECK(parts.eos == 0.0);
}

TEST_CASE("loss decomposition and inactive positions") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 2);
  auto s = mixed_samples(2, 11)[1];
  auto seq = assemble(s, vocab(), 1);
  auto m = compute_masks(seq);
  MatrixX<double> logits = MatrixX<double>::NullaryExpr(seq.length(), vocab().size(), [&]() { return n(rng); });
  auto base = live_loss(logits, seq, m, vocab(), 1.0);
  for (double w : {0.0, 0.3, 2.5}) {
    auto parts = live_loss(logits, seq, m, vocab(), w);
    CHECK(parts.lm == base.lm);
    CHECK(parts.eos == base.eos);
    CHECK(std::abs(parts.total - (parts.lm + w * parts.eos)) < 1e-12);
  }
  MatrixX<double> perturbed = logits;
  for (Index j = 0; j < seq.length(); ++j)
    if (!m.l[static_cast<size_t>(j)] && !m.f[static_cast<size_t>(j)]) perturbed.row(j).setRandom();
  CHECK(std::abs(live_loss(perturbed, seq, m, vocab(), 1.0).total - base.total) < 1e-12);
  CHECK_THROWS_AS(live_loss(MatrixX<double>(logits.topRows(3)), seq, m, vocab(), 1.0), ShapeError);
}

TEST_CASE("graph loss matches the scalar loss and chunks add up") {
  ModelConfig cfg = testing::tiny_config(2, 512);
  auto params = testing::random_model<double>(cfg, 2, 0.1);
  WorldConfig w;
  w.num_frames = 40;
  w.feature_dim = cfg.frame_feature_dim;
  auto v = gen_world(w, 4);
  auto s = make_narration_stream(v);
  auto seq = assemble(s, vocab(), 2);
  auto m = compute_masks(seq);
  auto targets = loss_targets(seq, m, vocab(), 0.7);
  ModelInput<double> in{seq.items, v.frame_features};
  auto expected = live_loss(forward_full(params, in), seq, m, vocab(), 0.7);

  Graph<double> g;
  auto leaves = bind_parameters(g, params);
  NodeId loss = build_chunk_loss(g, leaves, cfg, seq, targets, v.frame_features, 0, seq.items.size());
  g.forward();
  CHECK(std::abs(g.value(loss)(0, 0) - expected.total) < 1e-10);

  auto chunks = chunk_items(seq, 37);
  REQUIRE(chunks.size() > 1);
  Index covered = 0;
  for (auto [a, b] : chunks) {
    const Index p0 = seq.item_start[a];
    const Index p1 = b < seq.items.size() ? seq.item_start[b] : seq.length();
    CHECK(p0 == covered);
    CHECK(p1 - p0 <= 37);
    covered = p1;
  }
  CHECK(covered == seq.length());
}
