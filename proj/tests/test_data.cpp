#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "live/data.hpp"
#include "live/error.hpp"
#include "test_util.hpp"

using namespace live;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("live_data_" + name);
}

const QueryTemplate& first_of(Tense tense) {
  for (const auto& q : default_templates())
    if (q.tense == tense) return q;
  throw std::logic_error("no template");
}

std::string phrase(const QueryTemplate& q, int activity) {
  const auto& a = activity_catalog()[static_cast<size_t>(activity)];
  const std::string& verb = q.tense == Tense::Past ? a.past : q.tense == Tense::Current ? a.gerund : a.present;
  return q.response_prefix + " " + verb + " " + a.object;
}

}  // namespace

TEST_CASE("generated worlds are well formed and deterministic") {
  WorldConfig w;
  auto a = gen_world(w, 17);
  CHECK(a.num_frames == 600);
  CHECK(a.num_frames / a.fps == doctest::Approx(300.0));
  REQUIRE(!a.segments.empty());
  for (size_t i = 0; i < a.segments.size(); ++i) {
    const Segment& s = a.segments[i];
    CHECK(s.start_frame < s.end_frame);
    CHECK(s.start_frame >= 0);
    CHECK(s.end_frame < a.num_frames);
    CHECK(s.end_frame - s.start_frame >= w.min_duration);
    CHECK(s.end_frame - s.start_frame <= w.max_duration);
    if (i > 0) CHECK(a.segments[i - 1].end_frame <= s.start_frame);
  }
  for (int f = 0; f < a.num_frames; ++f) {
    int covering = kBackgroundState;
    for (const Segment& s : a.segments)
      if (s.start_frame <= f && f < s.end_frame) covering = s.activity_id;
    CHECK(a.states[static_cast<size_t>(f)] == covering);
  }

  auto b = gen_world(w, 17);
  CHECK(a.segments == b.segments);
  CHECK(a.states == b.states);
  CHECK(testing::bitwise_equal(a.frame_features, b.frame_features));
  CHECK(gen_world(w, 18).segments != a.segments);
}

TEST_CASE("zero noise gives constant features within a segment") {
  WorldConfig w;
  w.noise_sigma = 0.0;
  auto v = gen_world(w, 3);
  const MatrixX<double> table = state_embeddings(w);
  for (const Segment& s : v.segments) {
    for (int f = s.start_frame; f < s.end_frame; ++f) {
      CHECK(testing::bitwise_equal(MatrixX<double>(v.frame_features.row(f)),
                                   MatrixX<double>(v.frame_features.row(s.start_frame))));
    }
    CHECK(testing::bitwise_equal(MatrixX<double>(v.frame_features.row(s.start_frame)),
                                 MatrixX<double>(table.row(s.activity_id))));
  }
}

TEST_CASE("world config errors") {
  WorldConfig w;
  w.min_duration = 50;
  w.max_duration = 40;
  CHECK_THROWS_AS(gen_world(w, 1), ConfigError);
  w = WorldConfig{};
  w.num_frames = 5;
  CHECK_THROWS_AS(gen_world(w, 1), ConfigError);
}

TEST_CASE("narration streams") {
  auto v = testing::make_video(60, {{0, 2, 12}, {3, 12, 30}, {5, 40, 55}});
  auto s = make_narration_stream(v);
  REQUIRE(s.turns.size() == 4);
  CHECK(s.turns[0].role == Role::User);
  CHECK(s.turns[0].frame == 0);
  CHECK(s.turns[0].text == kNarrationInstruction);
  CHECK(s.assistant_turns() == 3);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(s.turns[i + 1].frame == v.segments[i].start_frame);
    CHECK(s.turns[i + 1].text == v.segments[i].name_phrase);
  }
  auto empty = make_narration_stream(testing::make_video(20, {}));
  CHECK(empty.turns.size() == 1);
  CHECK(empty.assistant_turns() == 0);
}

TEST_CASE("events interleave frames and turns in temporal order") {
  StreamSample s;
  s.num_frames = 3;
  s.turns = {{Role::User, 0, "a"}, {Role::Assistant, 1, "b"}, {Role::User, 1, "c"}};
  auto ev = events(s);
  REQUIRE(ev.size() == 6);
  CHECK(ev[0].kind == EventKind::Frame);
  CHECK(ev[1].kind == EventKind::User);
  CHECK(ev[2].kind == EventKind::Frame);
  CHECK(ev[3].kind == EventKind::User);
  CHECK(*ev[3].text == "c");
  CHECK(ev[4].kind == EventKind::Assistant);
  CHECK(ev[5].kind == EventKind::Frame);
}

TEST_CASE("response rules over a hand-built timeline") {
  // segments: 0 [0,10), 1 [10,20), gap, 2 [25,30)
  auto v = testing::make_video(40, {{0, 0, 10}, {1, 10, 20}, {2, 25, 30}});
  CHECK(v.critical_timestamps() == std::vector<int>{0, 10, 20, 25, 30});
  const auto& past = first_of(Tense::Past);
  const auto& cur = first_of(Tense::Current);
  const auto& fut = first_of(Tense::Future);

  CHECK(respond(v, past, 22) == phrase(past, 1));
  CHECK(respond(v, past, 10) == phrase(past, 0));
  CHECK(respond(v, past, 5) == past.fallback);
  CHECK(respond(v, cur, 12) == phrase(cur, 1));
  CHECK(respond(v, cur, 22) == cur.fallback);
  CHECK(respond(v, fut, 10) == phrase(fut, 2));
  CHECK(respond(v, fut, 0) == phrase(fut, 1));
  CHECK(respond(v, fut, 25) == fut.fallback);

  auto synth = synthesize_dialogue(v, default_templates(), 4);
  CHECK(synth.size() == default_templates().size());
  std::set<std::string> questions;
  for (const auto& q : synth) {
    questions.insert(q.query.question);
    REQUIRE(q.responses.size() == 5);
    for (size_t i = 0; i < 5; ++i) {
      CHECK(q.responses[i].frame == v.critical_timestamps()[i]);
      CHECK(!q.responses[i].text.empty());
    }
  }
  CHECK(questions.size() == default_templates().size());
  CHECK_THROWS_AS(synthesize_dialogue(v, {}, 1), ConfigError);
}

TEST_CASE("query insertion scopes") {
  auto v = testing::make_video(50, {{0, 5, 15}, {1, 15, 30}, {2, 35, 45}});
  auto synth = synthesize_dialogue(v, default_templates(), 9);
  const size_t crit = v.critical_timestamps().size();

  auto at0 = insert_queries_at(v, synth, {{0, 0}});
  CHECK(at0.assistant_turns() == static_cast<int>(crit) + 1);
  CHECK(at0.turns.front().role == Role::User);
  CHECK(at0.turns[1].frame == 0);

  auto last = insert_queries_at(v, synth, {{1, 49}});
  CHECK(last.assistant_turns() == 1);
  CHECK(last.turns.back().frame == 49);

  auto merged = insert_queries_at(v, synth, {{2, 15}});
  int at15 = 0;
  for (const Turn& t : merged.turns) at15 += t.role == Role::Assistant && t.frame == 15;
  CHECK(at15 == 1);

  auto two = insert_queries_at(v, synth, {{3, 31}, {2, 12}});
  int current = -1;
  int second_start = 31;
  for (const Turn& t : two.turns) {
    if (t.role == Role::User) current = t.frame;
    if (t.role == Role::Assistant && t.frame >= second_start) CHECK(current == second_start);
  }
  CHECK(two.turns.front().frame == 12);

  CHECK_THROWS_AS(insert_queries_at(v, synth, {{0, 50}}), ConfigError);
  CHECK_THROWS_AS(insert_queries_at(v, synth, {{0, -1}}), ConfigError);
  CHECK_THROWS_AS(insert_queries(v, synth, 4, 1), ConfigError);
  CHECK_THROWS_AS(insert_queries(v, synth, 0, 1), ConfigError);
}

TEST_CASE("random insertion respects the cap and is deterministic") {
  WorldConfig w;
  for (uint64_t seed = 0; seed < 30; ++seed) {
    auto v = gen_world(w, seed);
    auto synth = synthesize_dialogue(v, default_templates(), seed);
    auto a = insert_queries(v, synth, 3, seed);
    auto b = insert_queries(v, synth, 3, seed);
    CHECK(a == b);
    int users = 0;
    for (const Turn& t : a.turns) users += t.role == Role::User;
    CHECK(users >= 1);
    CHECK(users <= 3);
  }
}

TEST_CASE("jsonl round trip and errors") {
  WorldConfig w;
  std::vector<StreamSample> samples;
  for (uint64_t seed = 0; seed < 4; ++seed) {
    auto v = gen_world(w, seed);
    samples.push_back(make_narration_stream(v));
    samples.push_back(insert_queries(v, synthesize_dialogue(v, default_templates(), seed), 3, seed));
  }
  const auto path = temp_path("round.jsonl");
  write_jsonl(samples, path);
  CHECK(read_jsonl(path) == samples);

  {
    std::ofstream out(path, std::ios::trunc);
    out << to_jsonl_line(samples[0]) << "\n";
    auto j = to_jsonl_line(samples[1]);
    const auto at = j.find("\"fps\"");
    j.erase(at, j.find(',', at) - at + 1);
    out << j << "\n";
  }
  try {
    read_jsonl(path);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    CHECK(msg.find(":2:") != std::string::npos);
    CHECK(msg.find("fps") != std::string::npos);
  }

  {
    std::ofstream out(path, std::ios::trunc);
    auto j = to_jsonl_line(samples[0]);
    j.replace(j.find("\"version\":1"), 11, "\"version\":2");
    out << j << "\n";
  }
  CHECK_THROWS_AS(read_jsonl(path), VersionError);

  { std::ofstream out(path, std::ios::trunc); }
  CHECK(read_jsonl(path).empty());
  std::filesystem::remove(path);
}

TEST_CASE("features regenerate from states and seed") {
  WorldConfig w;
  auto v = gen_world(w, 5);
  auto s = make_narration_stream(v);
  auto again = from_jsonl_line(to_jsonl_line(s));
  CHECK(testing::bitwise_equal(render_features(w, again.states, again.feature_seed), v.frame_features));
}
