#include <sstream>

#include "doctest.h"
#include "live/error.hpp"
#include "live/train.hpp"
#include "test_util.hpp"

using namespace live;

namespace {

WorldConfig small_world(int frames = 40) {
  WorldConfig w;
  w.num_frames = frames;
  w.feature_dim = 6;
  w.min_duration = 4;
  w.max_duration = 10;
  w.max_gap = 4;
  return w;
}

std::vector<StreamSample> narration_set(const WorldConfig& w, int n, uint64_t seed) {
  std::vector<StreamSample> out;
  for (int i = 0; i < n; ++i) out.push_back(make_narration_stream(gen_world(w, derive_seed(seed, static_cast<uint64_t>(i)))));
  return out;
}

ModelConfig small_model(int max_context = 256) {
  ModelConfig cfg = testing::tiny_config(1, max_context);
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  return cfg;
}

}  // namespace

TEST_CASE("adam step matches a hand update") {
  ModelConfig cfg = small_model();
  auto params = init_model<double>(cfg, 3);
  auto before = params;
  double sq = 0;
  for (auto& [name, t] : params.named_tensors()) {
    t->ensure_grad();
    t->grad.setConstant(0.01);
    t->grad(0, 0) = -0.02;
    sq += t->grad.squaredNorm();
  }
  TrainConfig tc;
  AdamState<double> state;
  const double norm = adam_step(params, state, tc);
  CHECK(norm == doctest::Approx(std::sqrt(sq)).epsilon(1e-12));
  const double clip = norm > 1.0 ? 1.0 / norm : 1.0;
  auto after = params.named_tensors();
  auto orig = before.named_tensors();
  for (size_t i = 0; i < after.size(); ++i) {
    for (Index r = 0; r < after[i].second->value.rows(); ++r) {
      for (Index c = 0; c < after[i].second->value.cols(); ++c) {
        const double g = (r == 0 && c == 0 ? -0.02 : 0.01) * clip;
        // first step: bias-corrected m = g, v = g^2
        const double expect = orig[i].second->value(r, c) - tc.learning_rate * g / (std::abs(g) + tc.adam_eps);
        CHECK(after[i].second->value(r, c) == doctest::Approx(expect).epsilon(1e-12));
      }
    }
  }
  CHECK(state.t == 1);
}

TEST_CASE("a chunk budget covering the sequence reproduces whole-sequence gradients") {
  WorldConfig w = small_world(30);
  auto samples = narration_set(w, 1, 5);
  auto vocab = Vocabulary::standard();
  ModelConfig cfg = small_model(512);
  TrainConfig whole;
  whole.scheme = Scheme::PerFrame;
  auto ex = prepare_examples<double>(samples, w, vocab, cfg, whole);
  REQUIRE(ex[0].seq.length() > 64);

  auto a = testing::random_model<double>(cfg, 2, 0.1);
  auto b = a;
  auto c = a;
  a.zero_grad();
  b.zero_grad();
  c.zero_grad();
  auto la = accumulate_example(a, ex[0], whole, 1.0);
  TrainConfig big = whole;
  big.chunk_tokens = ex[0].seq.length();
  auto lb = accumulate_example(b, ex[0], big, 1.0);
  CHECK(la == lb);
  auto ta = a.named_tensors(), tb = b.named_tensors();
  for (size_t i = 0; i < ta.size(); ++i) CHECK(testing::bitwise_equal(ta[i].second->grad, tb[i].second->grad));

  // windows lose earlier context, so only finiteness and a nonzero gradient are expected
  TrainConfig small = whole;
  small.chunk_tokens = 64;
  auto lc = accumulate_example(c, ex[0], small, 1.0);
  CHECK(std::isfinite(lc.first));
  CHECK(std::isfinite(lc.second));
  CHECK(c.token_embedding.grad.norm() > 0);
}

TEST_CASE("training is deterministic and writes the log") {
  WorldConfig w = small_world();
  auto samples = narration_set(w, 4, 11);
  auto vocab = Vocabulary::standard();
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 2;
  tc.seed = 9;
  auto p1 = init_model<float>(small_model(), 1);
  auto p2 = p1;
  std::ostringstream log1, log2;
  auto r1 = train(p1, samples, w, vocab, tc, &log1);
  auto r2 = train(p2, samples, w, vocab, tc, &log2);
  CHECK(log1.str() == log2.str());
  auto t1 = p1.named_tensors(), t2 = p2.named_tensors();
  for (size_t i = 0; i < t1.size(); ++i) CHECK(testing::bitwise_equal(t1[i].second->value, t2[i].second->value));

  REQUIRE(r1.steps.size() == 4);
  std::istringstream in(log1.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == kTrainLogHeader);
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 4);
  for (const auto& s : r1.steps) {
    CHECK(s.total == doctest::Approx(s.lm_loss + s.eos_loss));
    CHECK(s.tokens > 0);
  }
  int64_t tokens = 0;
  for (const auto& s : samples) tokens += assembled_length(s, vocab, 1, Scheme::Streaming);
  CHECK(r1.tokens_per_epoch == tokens);
}

TEST_CASE("training lowers the loss on a small narration set") {
  WorldConfig w = small_world();
  auto samples = narration_set(w, 8, 4);
  auto vocab = Vocabulary::standard();
  TrainConfig tc;
  tc.epochs = 4;
  tc.learning_rate = 3e-3;
  auto params = init_model<float>(small_model(), 2);
  auto r = train(params, samples, w, vocab, tc);
  REQUIRE(r.epoch_mean_loss.size() == 4);
  for (size_t e = 1; e < r.epoch_mean_loss.size(); ++e) CHECK(r.epoch_mean_loss[e] < r.epoch_mean_loss[e - 1]);
}

TEST_CASE("training errors") {
  WorldConfig w = small_world();
  auto samples = narration_set(w, 2, 1);
  auto vocab = Vocabulary::standard();
  TrainConfig tc;
  auto params = init_model<float>(small_model(), 1);

  CHECK_THROWS_AS(train(params, {}, w, vocab, tc), ConfigError);
  TrainConfig bad = tc;
  bad.stream_loss_weight = -1;
  CHECK_THROWS_AS(train(params, samples, w, vocab, bad), ConfigError);

  auto poisoned = params;
  poisoned.token_embedding.value(token::kSystem, 0) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(train(poisoned, samples, w, vocab, tc), DivergenceError);

  auto tiny = init_model<float>(small_model(64), 1);
  TrainConfig pf = tc;
  pf.scheme = Scheme::PerFrame;
  try {
    train(tiny, samples, w, vocab, pf);
    FAIL("expected ContextOverflowError");
  } catch (const ContextOverflowError& e) {
    CHECK(std::string(e.what()).find("sample 0") != std::string::npos);
  }
}
