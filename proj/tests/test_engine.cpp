#include <filesystem>
#include <fstream>
#include <set>
#include <algorithm>
#include <random>

#include "doctest.h"
#include "live/engine.hpp"
#include "live/error.hpp"
#include "test_util.hpp"

using namespace live;
using testing::dist;
using testing::ScriptedStream;

namespace {

const Vocabulary& vocab() {
  static const Vocabulary v = Vocabulary::standard();
  return v;
}

int V() { return vocab().size(); }

// Speaks after the frames in `speak`: role marker, `words` word tokens, turn
// EOS. Silent (P = 0.9) everywhere else.
ScriptedStream::Rule speaker(std::set<int> speak, int words) {
  return [speak, words](const std::vector<int>& h) {
    const int last = h.back();
    if (last < 0) {
      return speak.count(-last - 1) ? dist(V(), {{token::kAssistant, 0.9}}) : dist(V(), {{token::kStreamEos, 0.9}});
    }
    size_t k = h.size();
    while (k > 0 && h[k - 1] >= 0 && h[k - 1] != token::kAssistant) --k;
    if (k == 0 || h[k - 1] != token::kAssistant) return dist(V(), {{token::kStreamEos, 0.9}});
    const int since = static_cast<int>(h.size() - k);
    return since < words ? dist(V(), {{token::kFirstWordId + since, 0.9}}) : dist(V(), {{token::kTurnEos, 0.9}});
  };
}

// Wraps a stream and keeps every appended item and returned row.
class Recording final : public LanguageStream {
 public:
  explicit Recording(LanguageStream& inner) : inner_(inner) {}
  int tokens_per_frame() const override { return inner_.tokens_per_frame(); }
  Index max_context() const override { return inner_.max_context(); }
  Index length() const override { return inner_.length(); }
  MatrixX<double> append(const std::vector<Item>& items) override {
    MatrixX<double> lp = inner_.append(items);
    items_.insert(items_.end(), items.begin(), items.end());
    rows_.conservativeResize(rows_.rows() + lp.rows(), lp.cols());
    rows_.bottomRows(lp.rows()) = lp;
    return lp;
  }
  void truncate(Index) override { throw std::logic_error("not recorded"); }

  std::vector<Item> items_;
  MatrixX<double> rows_;

 private:
  LanguageStream& inner_;
};

std::vector<int> assistant_tokens(const std::string& text) {
  std::vector<int> ids = {token::kAssistant};
  for (int id : vocab().encode(text)) ids.push_back(id);
  ids.push_back(token::kTurnEos);
  return ids;
}

InferenceConfig latency(double decode_ms, int capacity = 1, SkipPolicy policy = SkipPolicy::DropOldest) {
  InferenceConfig c;
  c.fps = 2.0;
  c.encode_ms_per_frame = 5.0;
  c.decode_ms_per_token = decode_ms;
  c.queue_capacity = capacity;
  c.skip_policy = policy;
  return c;
}

}  // namespace

TEST_CASE("decide_eos follows the threshold rule") {
  const int eos = vocab().stream_eos();
  const int you = vocab().id("you");
  auto a = decide_eos(dist(V(), {{eos, 0.61}, {you, 0.2}}), eos, 0.6);
  CHECK(a.silent);
  auto b = decide_eos(dist(V(), {{eos, 0.59}, {you, 0.2}}), eos, 0.6);
  CHECK_FALSE(b.silent);
  CHECK(b.first_token == you);
  CHECK(decide_eos(dist(V(), {{eos, 0.0}, {you, 0.5}}), eos, 0.0).silent);
  CHECK(decide_eos(dist(V(), {{eos, 0.9999}}), eos, 1.0).silent == false);
  CHECK(decide_eos(testing::one_hot(V(), eos), eos, 1.0).silent);
  CHECK_THROWS_AS(decide_eos(dist(V(), {{eos, 0.5}}), eos, 1.0 + 1e-9), ConfigError);
  CHECK_THROWS_AS(decide_eos(dist(V(), {{eos, 0.5}}), eos, -0.1), ConfigError);
  RowVectorX<double> bad = dist(V(), {{eos, 0.5}});
  bad(you) += 2e-4;
  CHECK_THROWS_AS(decide_eos(bad, eos, 0.6), NormalizationError);
  bad(you) -= 1.5e-4;
  CHECK_NOTHROW(decide_eos(bad, eos, 0.6));
}

TEST_CASE("raising theta never turns speech into silence") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int eos = vocab().stream_eos();
  const std::vector<double> thetas = {0.0, 0.3, 0.5, 0.6, 0.7, 0.8, 1.0};
  for (int trial = 0; trial < 500; ++trial) {
    RowVectorX<double> p(V());
    for (Index i = 0; i < p.size(); ++i) p(i) = u(rng);
    p(eos) *= 40 * u(rng);
    p /= p.sum();
    bool spoke = false;
    for (double th : thetas) {
      const bool silent = decide_eos(p, eos, th).silent;
      if (spoke) CHECK_FALSE(silent);
      spoke = spoke || !silent;
    }
  }
}

TEST_CASE("cache growth per step") {
  for (int p : {1, 3}) {
    ScriptedStream lm(V(), p, 512, speaker({2}, 3));
    InferenceConfig cfg;
    Session s(lm, vocab(), Scheme::Streaming, cfg);
    const Index prompt = static_cast<Index>(system_prompt_tokens(vocab()).size());
    CHECK(s.cache_tokens() == prompt);
    auto a = s.step(0);
    CHECK(a.decision.silent);
    CHECK(s.cache_tokens() == prompt + p);
    s.step(1);
    auto c = s.step(2);
    CHECK_FALSE(c.decision.silent);
    CHECK(c.emitted.size() == 5);
    CHECK(c.appended == p + 5);
    CHECK(s.cache_tokens() == prompt + 3 * p + 5);
    CHECK(s.response_text(c.emitted) == vocab().decode({token::kFirstWordId, token::kFirstWordId + 1, token::kFirstWordId + 2}));
  }
}

TEST_CASE("theta zero is always silent on a real model") {
  auto cfg = testing::tiny_config(2, 128);
  auto params = testing::random_model<double>(cfg, 4);
  MatrixX<double> feats = MatrixX<double>::Random(10, cfg.frame_feature_dim);
  ModelStream<double> lm(params, feats);
  InferenceConfig ic;
  ic.theta = 0.0;
  Session s(lm, vocab(), Scheme::Streaming, ic);
  const Index before = s.cache_tokens();
  for (int f = 0; f < 10; ++f) CHECK(s.step(f).decision.silent);
  CHECK(s.cache_tokens() == before + 20);
}

TEST_CASE("stepwise session logits match a full recompute of the realized sequence") {
  auto cfg = testing::tiny_config(2, 256);
  auto params = testing::random_model<double>(cfg, 11, 0.5);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  MatrixX<double> feats(20, cfg.frame_feature_dim);
  for (Index i = 0; i < feats.size(); ++i) feats.data()[i] = normal(rng);

  for (Scheme scheme : {Scheme::Streaming, Scheme::PerFrame}) {
    ModelStream<double> inner(params, feats);
    Recording lm(inner);
    InferenceConfig ic;
    ic.theta = 0.3;
    ic.max_response_tokens = 4;
    Session s(lm, vocab(), scheme, ic);
    s.inject_query("what did i just finish ?");
    int spoke = 0;
    for (int f = 0; f < 12; ++f) spoke += s.step(f).decision.silent ? 0 : 1;
    INFO(scheme_name(scheme) << " spoke " << spoke);
    ModelInput<double> in{lm.items_, feats};
    MatrixX<double> full = forward_full(params, in);
    REQUIRE(full.rows() == lm.rows_.rows());
    for (Index r = 0; r < full.rows(); ++r) {
      const double m = full.row(r).maxCoeff();
      full.row(r).array() -= m + std::log((full.row(r).array() - m).exp().sum());
    }
    CHECK((full - lm.rows_).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(static_cast<Index>(s.tokens().size()) == s.cache_tokens());
  }
}

TEST_CASE("scripted replay reproduces the training layout") {
  WorldConfig w;
  w.num_frames = 80;
  auto v = gen_world(w, 21);
  auto sample = insert_queries(v, synthesize_dialogue(v, default_templates(), 21), 3, 21);
  for (Scheme scheme : {Scheme::Streaming, Scheme::Interleaved, Scheme::PerFrame}) {
    ScriptedStream lm(V(), 2, 4096, [](const std::vector<int>&) { return dist(V(), {}); });
    Session s(lm, vocab(), scheme, InferenceConfig{});
    for (int f = 0; f < sample.num_frames; ++f) {
      std::vector<int> forced;
      for (const Turn& t : sample.turns) {
        if (t.frame != f) continue;
        if (t.role == Role::User) s.inject_query(t.text);
        if (t.role == Role::Assistant) forced = assistant_tokens(t.text);
      }
      s.step(f, &forced);
    }
    CHECK(s.tokens() == assemble(sample, vocab(), 2, scheme).tokens);
  }
  ScriptedStream lm(V(), 1, 64, [](const std::vector<int>&) { return dist(V(), {}); });
  Session s(lm, vocab(), Scheme::Streaming, InferenceConfig{});
  std::vector<int> bad = {token::kFirstWordId, token::kTurnEos};
  CHECK_THROWS_AS(s.step(0, &bad), ConfigError);
}

TEST_CASE("queries condition later decisions only") {
  // speaks only once a user token is in context
  auto rule = [](const std::vector<int>& h) {
    const bool asked = std::count(h.begin(), h.end(), token::kUser) > 0;
    const int last = h.back();
    if (last < 0 || last == token::kUser || (last >= token::kFirstWordId && asked && h.back() != token::kTurnEos)) {
      bool after_assistant = false;
      for (size_t k = h.size(); k-- > 0;) {
        if (h[k] < 0 || h[k] == token::kUser) break;
        if (h[k] == token::kAssistant) after_assistant = true;
      }
      if (after_assistant) return dist(V(), {{token::kTurnEos, 0.9}});
      return asked ? dist(V(), {{token::kAssistant, 0.9}}) : dist(V(), {{token::kStreamEos, 0.9}});
    }
    return dist(V(), {{token::kTurnEos, 0.9}});
  };
  InferenceConfig cfg = latency(0.0, 4);
  {
    ScriptedStream lm(V(), 1, 1024, rule);
    auto t = run_stream(lm, vocab(), Scheme::Streaming, 12, {{2.5, "what am i doing now ?"}}, cfg);
    for (const auto& r : t.frames) CHECK((r.decision == FrameOutcome::Spoke) == (r.frame >= 5));
    // user turn sits right after frame 5's slot
    const Index prompt = static_cast<Index>(system_prompt_tokens(vocab()).size());
    CHECK(lm.history()[static_cast<size_t>(prompt + 6)] == token::kUser);
  }
  {
    ScriptedStream lm(V(), 1, 1024, rule);
    auto t = run_stream(lm, vocab(), Scheme::Streaming, 6, {{0.0, "what am i doing now ?"}}, cfg);
    for (const auto& r : t.frames) CHECK(r.decision == FrameOutcome::Spoke);
  }
  ScriptedStream lm(V(), 1, 1024, rule);
  CHECK_THROWS_AS(run_stream(lm, vocab(), Scheme::Streaming, 6, {{3.0, "what am i doing now ?"}}, cfg), ConfigError);
}

TEST_CASE("hand-built schedule with drop_oldest") {
  // 500 ms frame interval, 5 ms encode, 100 ms per appended position; frames
  // 2 and 3 speak 8 tokens (9 positions with the frame), the rest cost 1.
  ScriptedStream lm(V(), 1, 1024, speaker({2, 3}, 6));
  auto t = run_stream(lm, vocab(), Scheme::Streaming, 10, {}, latency(100.0));
  struct Expect {
    FrameOutcome d;
    double start, end;
  };
  const std::vector<Expect> expect = {
      {FrameOutcome::Silent, 0.005, 0.105}, {FrameOutcome::Silent, 0.505, 0.605},
      {FrameOutcome::Spoke, 1.005, 1.905},  {FrameOutcome::Spoke, 1.905, 2.805},
      {FrameOutcome::Skipped, 2.505, 2.505}, {FrameOutcome::Silent, 2.805, 2.905},
      {FrameOutcome::Silent, 3.005, 3.105}, {FrameOutcome::Silent, 3.505, 3.605},
      {FrameOutcome::Silent, 4.005, 4.105}, {FrameOutcome::Silent, 4.505, 4.605}};
  REQUIRE(t.frames.size() == expect.size());
  for (size_t i = 0; i < expect.size(); ++i) {
    INFO("frame " << i);
    CHECK(t.frames[i].decision == expect[i].d);
    CHECK(t.frames[i].start == doctest::Approx(expect[i].start).epsilon(1e-12));
    CHECK(t.frames[i].end == doctest::Approx(expect[i].end).epsilon(1e-12));
    CHECK(t.frames[i].arrival == doctest::Approx(0.5 * static_cast<double>(i)));
  }
  CHECK(t.stats.frames_skipped == 1);
  CHECK(t.stats.frames_processed == 9);
  CHECK(t.stats.responses == 2);
  CHECK(t.stats.peak_queue_depth == 1);
  CHECK(t.stats.duration == doctest::Approx(5.0));
  CHECK(t.stats.processed_fps == doctest::Approx(1.8));
  CHECK(t.stats.max_lag == doctest::Approx(1.305));
  const Index prompt = static_cast<Index>(system_prompt_tokens(vocab()).size());
  CHECK(t.stats.peak_cache_tokens == prompt + 9 + 2 * 8);
}

TEST_CASE("hand-built schedule with block") {
  ScriptedStream lm(V(), 1, 1024, speaker({2, 3}, 6));
  auto t = run_stream(lm, vocab(), Scheme::Streaming, 10, {}, latency(100.0, 1, SkipPolicy::Block));
  const std::vector<double> start = {0.005, 0.505, 1.005, 1.905, 2.805, 2.905, 3.005, 3.505, 4.005, 4.505};
  for (size_t i = 0; i < start.size(); ++i) {
    INFO("frame " << i);
    CHECK(t.frames[i].decision != FrameOutcome::Skipped);
    CHECK(t.frames[i].start == doctest::Approx(start[i]).epsilon(1e-12));
  }
  CHECK(t.stats.frames_skipped == 0);
  CHECK(t.stats.peak_backlog == 1);
  CHECK(t.stats.max_lag == doctest::Approx(2.805 - 1.5));
}

TEST_CASE("stream invariants") {
  for (double decode : {0.0, 30.0, 120.0}) {
    ScriptedStream lm(V(), 1, 4096, speaker({3, 4, 5, 9, 10, 11, 12, 30}, 10));
    auto t = run_stream(lm, vocab(), Scheme::Streaming, 40, {}, latency(decode, 2));
    if (decode == 0.0) CHECK(t.stats.frames_skipped == 0);
    CHECK(t.stats.processed_fps <= 2.0 + 1e-12);
    double last = -1;
    for (const auto& r : t.frames) {
      if (r.decision == FrameOutcome::Skipped) continue;
      CHECK(r.start >= last);
      CHECK(r.end >= r.start);
      CHECK(r.start >= r.arrival);
      last = r.end;
      if (r.decision == FrameOutcome::Spoke) CHECK(!r.response_text.empty());
    }
  }
  // decoder idle at every arrival: no skips even with a one-slot queue
  ScriptedStream lm(V(), 1, 4096, speaker({}, 1));
  auto t = run_stream(lm, vocab(), Scheme::Streaming, 40, {}, latency(400.0));
  CHECK(t.stats.frames_skipped == 0);
}

TEST_CASE("per-frame silence costs the template") {
  ScriptedStream a(V(), 1, 4096, speaker({}, 1));
  ScriptedStream b(V(), 1, 4096, [](const std::vector<int>&) { return dist(V(), {{token::kStreamEos, 0.9}}); });
  auto streaming = run_stream(a, vocab(), Scheme::Streaming, 30, {}, latency(30.0, 4));
  auto per_frame = run_stream(b, vocab(), Scheme::PerFrame, 30, {}, latency(30.0, 4));
  const Index prompt = static_cast<Index>(system_prompt_tokens(vocab()).size());
  CHECK(streaming.stats.peak_cache_tokens == prompt + 30);
  CHECK(per_frame.stats.peak_cache_tokens == prompt + 30 * 11);
  CHECK(per_frame.frames[1].end - per_frame.frames[1].start == doctest::Approx(0.33));
}

TEST_CASE("simulated runs are deterministic and concurrent mode agrees on decisions") {
  auto cfg = testing::tiny_config(1, 512);
  auto params = testing::random_model<float>(cfg, 5, 0.4);
  MatrixX<float> feats = MatrixX<float>::Random(25, cfg.frame_feature_dim);
  InferenceConfig ic;
  ic.theta = 0.2;
  ic.max_response_tokens = 5;
  ic.fps = 200;
  ic.encode_ms_per_frame = 0;
  ic.decode_ms_per_token = 0;
  ic.queue_capacity = 2;
  ic.skip_policy = SkipPolicy::Block;
  std::vector<ScheduledQuery> q = {{0.0, "what have i done ?"}, {0.05, "what am i doing now ?"}};

  auto run = [&](ClockMode mode) {
    ModelStream<float> lm(params, feats);
    return run_stream(lm, vocab(), Scheme::Streaming, 25, q, ic, mode);
  };
  auto a = run(ClockMode::Simulated);
  auto b = run(ClockMode::Simulated);
  auto dump = [](const StreamTranscript& t) {
    std::string s;
    for (const auto& r : t.frames) s += to_json(r).dump() + "\n";
    return s + to_json(t.stats).dump();
  };
  CHECK(dump(a) == dump(b));

  auto c = run(ClockMode::Concurrent);
  REQUIRE(c.frames.size() == a.frames.size());
  CHECK(c.stats.frames_skipped == 0);
  for (size_t i = 0; i < a.frames.size(); ++i) {
    CHECK(a.frames[i].decision == c.frames[i].decision);
    CHECK(a.frames[i].response_text == c.frames[i].response_text);
    CHECK(a.frames[i].cache_tokens == c.frames[i].cache_tokens);
  }

  const auto path = std::filesystem::temp_directory_path() / "live_transcript.jsonl";
  write_transcript_jsonl(a, path);
  std::ifstream in(path);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    auto j = nlohmann::json::parse(line);
    CHECK(j.at("frame").get<int>() == n);
    ++n;
  }
  CHECK(n == 25);
  std::filesystem::remove(path);
}

TEST_CASE("engine errors") {
  InferenceConfig bad;
  bad.queue_capacity = 0;
  ScriptedStream lm(V(), 1, 64, speaker({}, 1));
  CHECK_THROWS_AS(run_stream(lm, vocab(), Scheme::Streaming, 5, {}, bad), ConfigError);
  bad = InferenceConfig{};
  bad.decode_ms_per_token = -1;
  CHECK_THROWS_AS(run_stream(lm, vocab(), Scheme::Streaming, 5, {}, bad), ConfigError);
  bad = InferenceConfig{};
  bad.theta = 1.5;
  CHECK_THROWS_AS(run_stream(lm, vocab(), Scheme::Streaming, 5, {}, bad), ConfigError);

  ScriptedStream small(V(), 1, 30, speaker({}, 1));
  CHECK_THROWS_AS(run_stream(small, vocab(), Scheme::PerFrame, 10, {}, InferenceConfig{}), ContextOverflowError);
  CHECK(parse_skip_policy("block") == SkipPolicy::Block);
  CHECK_THROWS_AS(parse_skip_policy("drop"), ConfigError);
  CHECK_THROWS_AS(parse_clock_mode("fast"), ConfigError);
  auto j = to_json(InferenceConfig{});
  auto back = inference_config_from_json(j);
  CHECK(to_json(back) == j);
}
