#include "live/data.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "live/error.hpp"

namespace live {

void WorldConfig::validate() const {
  const int catalog = static_cast<int>(activity_catalog().size());
  if (num_activities < 1 || num_activities > catalog) {
    throw ConfigError("num_activities must be in [1, " + std::to_string(catalog) + "]");
  }
  if (min_duration < 1) throw ConfigError("min_duration must be at least 1");
  if (min_duration > max_duration) {
    throw ConfigError("min_duration " + std::to_string(min_duration) + " exceeds max_duration " +
                      std::to_string(max_duration));
  }
  if (num_frames <= min_duration) {
    throw ConfigError("num_frames " + std::to_string(num_frames) + " too small for one segment of " +
                      std::to_string(min_duration) + " frames");
  }
  if (gap_probability < 0.0 || gap_probability > 1.0) throw ConfigError("gap_probability must be in [0, 1]");
  if (max_gap < 1) throw ConfigError("max_gap must be at least 1");
  if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be non-negative");
  if (!(fps > 0.0)) throw ConfigError("fps must be positive");
  if (feature_dim < 1) throw ConfigError("feature_dim must be positive");
  if (steps_per_task < 1 || steps_per_task > num_activities) {
    throw ConfigError("steps_per_task must be in [1, num_activities]");
  }
}

std::vector<int> AnnotatedVideo::critical_timestamps() const {
  std::set<int> times;
  for (const Segment& s : segments) {
    times.insert(s.start_frame);
    times.insert(s.end_frame);
  }
  return {times.begin(), times.end()};
}

const char* role_name(Role role) { return role == Role::User ? "user" : "assistant"; }

const char* source_name(Source source) { return source == Source::Narration ? "narration" : "dialogue"; }

int StreamSample::assistant_turns() const {
  return static_cast<int>(std::count_if(turns.begin(), turns.end(),
                                        [](const Turn& t) { return t.role == Role::Assistant; }));
}

std::vector<Event> events(const StreamSample& sample) {
  std::vector<Event> out;
  out.reserve(static_cast<size_t>(sample.num_frames) + sample.turns.size());
  size_t next = 0;
  for (int f = 0; f < sample.num_frames; ++f) {
    out.push_back({EventKind::Frame, f, nullptr});
    for (Role role : {Role::User, Role::Assistant}) {
      for (size_t i = next; i < sample.turns.size() && sample.turns[i].frame == f; ++i) {
        if (sample.turns[i].role == role) {
          out.push_back({role == Role::User ? EventKind::User : EventKind::Assistant, f, &sample.turns[i].text});
        }
      }
    }
    while (next < sample.turns.size() && sample.turns[next].frame == f) ++next;
  }
  return out;
}

uint64_t derive_seed(uint64_t base, uint64_t index) {
  // splitmix64 over the pair
  uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

MatrixX<double> state_embeddings(const WorldConfig& world) {
  world.validate();
  std::mt19937_64 rng(derive_seed(world.state_seed, 0));
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixX<double> e(world.num_activities + 1, world.feature_dim);
  for (Index r = 0; r < e.rows(); ++r)
    for (Index c = 0; c < e.cols(); ++c) e(r, c) = normal(rng);
  return e;
}

std::vector<std::vector<int>> task_recipes(const WorldConfig& world) {
  world.validate();
  std::mt19937_64 rng(derive_seed(world.state_seed, 1));
  std::vector<std::vector<int>> recipes;
  for (size_t t = 0; t < task_name_catalog().size(); ++t) {
    std::vector<int> ids(static_cast<size_t>(world.num_activities));
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(static_cast<size_t>(world.steps_per_task));
    recipes.push_back(std::move(ids));
  }
  return recipes;
}

MatrixX<double> render_features(const WorldConfig& world, const std::vector<int>& states, uint64_t feature_seed) {
  const MatrixX<double> table = state_embeddings(world);
  std::mt19937_64 rng(feature_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixX<double> out(static_cast<Index>(states.size()), world.feature_dim);
  for (size_t i = 0; i < states.size(); ++i) {
    const int s = states[i];
    if (s != kBackgroundState && (s < 0 || s >= world.num_activities)) {
      throw FormatError("frame " + std::to_string(i) + " has state " + std::to_string(s) + " outside the world");
    }
    const Index row = s == kBackgroundState ? world.num_activities : s;
    for (Index c = 0; c < out.cols(); ++c) {
      const double noise = normal(rng);
      out(static_cast<Index>(i), c) = table(row, c) + world.noise_sigma * noise;
    }
  }
  return out;
}

AnnotatedVideo gen_world(const WorldConfig& world, uint64_t seed) {
  world.validate();
  std::mt19937_64 rng(seed);
  const auto recipes = task_recipes(world);
  AnnotatedVideo video;
  video.fps = world.fps;
  video.num_frames = world.num_frames;
  video.task_id = std::uniform_int_distribution<int>(0, static_cast<int>(recipes.size()) - 1)(rng);
  video.task_name = task_name_catalog()[static_cast<size_t>(video.task_id)];
  const auto& steps = recipes[static_cast<size_t>(video.task_id)];

  std::bernoulli_distribution gap(world.gap_probability);
  std::uniform_int_distribution<int> gap_len(1, world.max_gap);
  std::uniform_int_distribution<int> duration(world.min_duration, world.max_duration);
  int t = 0;
  for (size_t k = 0;; ++k) {
    if (gap(rng)) t += gap_len(rng);
    const int d = duration(rng);
    if (t + d >= world.num_frames) break;  // every end stays a valid frame
    const int id = steps[k % steps.size()];
    video.segments.push_back({id, activity_catalog()[static_cast<size_t>(id)].narration(), t, t + d});
    t += d;
  }

  video.states.assign(static_cast<size_t>(world.num_frames), kBackgroundState);
  for (const Segment& s : video.segments)
    for (int f = s.start_frame; f < s.end_frame; ++f) video.states[static_cast<size_t>(f)] = s.activity_id;
  video.feature_seed = derive_seed(seed, 0xfea7);
  video.frame_features = render_features(world, video.states, video.feature_seed);
  return video;
}

StreamSample make_narration_stream(const AnnotatedVideo& video) {
  StreamSample s;
  s.fps = video.fps;
  s.num_frames = video.num_frames;
  s.source = Source::Narration;
  s.states = video.states;
  s.feature_seed = video.feature_seed;
  s.turns.push_back({Role::User, 0, kNarrationInstruction});
  for (const Segment& seg : video.segments) s.turns.push_back({Role::Assistant, seg.start_frame, seg.name_phrase});
  return s;
}

std::string respond(const AnnotatedVideo& video, const QueryTemplate& query, int frame) {
  const Segment* pick = nullptr;
  const auto& segs = video.segments;
  switch (query.tense) {
    case Tense::Past:
      for (const Segment& s : segs)
        if (s.end_frame <= frame) pick = &s;
      break;
    case Tense::Current:
      for (const Segment& s : segs)
        if (s.start_frame <= frame && frame < s.end_frame) pick = &s;
      break;
    case Tense::Future:
      for (const Segment& s : segs) {
        if (s.start_frame > frame) {
          pick = &s;
          break;
        }
      }
      break;
  }
  if (pick == nullptr) return query.fallback;
  const ActivityPhrase& a = activity_catalog()[static_cast<size_t>(pick->activity_id)];
  const std::string& verb = query.tense == Tense::Past ? a.past : query.tense == Tense::Current ? a.gerund : a.present;
  return query.response_prefix + " " + verb + " " + a.object;
}

std::vector<SynthesizedQuery> synthesize_dialogue(const AnnotatedVideo& video,
                                                  const std::vector<QueryTemplate>& templates, uint64_t seed) {
  if (templates.empty()) throw ConfigError("synthesize_dialogue: no templates");
  std::vector<size_t> order(templates.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::vector<int> critical = video.critical_timestamps();
  std::vector<SynthesizedQuery> out;
  for (size_t i : order) {
    SynthesizedQuery q{templates[i], {}};
    if (q.query.question.empty()) throw FormatError("template " + std::to_string(i) + " has no question");
    for (int t : critical) {
      std::string text = respond(video, q.query, t);
      if (text.empty()) throw FormatError("template " + std::to_string(i) + " rendered empty text");
      q.responses.push_back({t, std::move(text)});
    }
    out.push_back(std::move(q));
  }
  return out;
}

StreamSample insert_queries_at(const AnnotatedVideo& video, const std::vector<SynthesizedQuery>& synthesized,
                               std::vector<Insertion> insertions) {
  for (const Insertion& ins : insertions) {
    if (ins.frame < 0 || ins.frame >= video.num_frames) {
      throw ConfigError("insertion frame " + std::to_string(ins.frame) + " outside [0, " +
                        std::to_string(video.num_frames) + ")");
    }
    if (ins.query >= synthesized.size()) throw ConfigError("insertion references unknown query");
  }
  std::sort(insertions.begin(), insertions.end(), [](const Insertion& a, const Insertion& b) { return a.frame < b.frame; });
  for (size_t i = 1; i < insertions.size(); ++i) {
    if (insertions[i].frame == insertions[i - 1].frame) throw ConfigError("two queries inserted at the same frame");
  }

  StreamSample s;
  s.fps = video.fps;
  s.num_frames = video.num_frames;
  s.source = Source::Dialogue;
  s.states = video.states;
  s.feature_seed = video.feature_seed;
  for (size_t i = 0; i < insertions.size(); ++i) {
    const SynthesizedQuery& q = synthesized[insertions[i].query];
    const int t_r = insertions[i].frame;
    const int scope_end = i + 1 < insertions.size() ? insertions[i + 1].frame : video.num_frames;
    s.turns.push_back({Role::User, t_r, q.query.question});
    s.turns.push_back({Role::Assistant, t_r, respond(video, q.query, t_r)});
    for (const TimedResponse& r : q.responses) {
      if (r.frame > t_r && r.frame < scope_end) s.turns.push_back({Role::Assistant, r.frame, r.text});
    }
  }
  return s;
}

StreamSample insert_queries(const AnnotatedVideo& video, const std::vector<SynthesizedQuery>& synthesized,
                            int max_queries, uint64_t seed) {
  if (max_queries < 1 || max_queries > 3) throw ConfigError("max_queries must be in [1, 3]");
  if (synthesized.empty()) throw ConfigError("insert_queries: no synthesized queries");
  std::mt19937_64 rng(seed);
  const int cap = std::min({max_queries, video.num_frames, static_cast<int>(synthesized.size())});
  const int count = std::uniform_int_distribution<int>(1, cap)(rng);
  std::set<int> frames;
  std::uniform_int_distribution<int> frame(0, video.num_frames - 1);
  while (static_cast<int>(frames.size()) < count) frames.insert(frame(rng));
  std::vector<size_t> picks(synthesized.size());
  std::iota(picks.begin(), picks.end(), 0);
  std::shuffle(picks.begin(), picks.end(), rng);
  std::vector<Insertion> insertions;
  size_t k = 0;
  for (int f : frames) insertions.push_back({picks[k++], f});
  return insert_queries_at(video, synthesized, std::move(insertions));
}

}  // namespace live
