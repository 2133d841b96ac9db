#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "live/catalog.hpp"
#include "live/tensor.hpp"

namespace live {

/// Parameters of the synthetic world every video is drawn from.
struct WorldConfig {
  int num_activities = 16;  // at most activity_catalog().size()
  int min_duration = 10;    // segment length bounds, frames
  int max_duration = 40;
  double gap_probability = 0.3;  // chance of a background gap before a segment
  int max_gap = 10;
  double noise_sigma = 0.3;
  int num_frames = 600;
  double fps = 2.0;
  int feature_dim = 16;
  int steps_per_task = 5;
  uint64_t state_seed = 20240501;  // shared state embeddings and task recipes

  void validate() const;  // throws ConfigError
  bool operator==(const WorldConfig&) const = default;
};

struct Segment {
  int activity_id = 0;
  std::string name_phrase;
  int start_frame = 0;  // inclusive
  int end_frame = 0;    // exclusive
  bool operator==(const Segment&) const = default;
};

inline constexpr int kBackgroundState = -1;

struct AnnotatedVideo {
  double fps = 2.0;
  int num_frames = 0;
  int task_id = 0;
  std::string task_name;
  std::vector<Segment> segments;
  std::vector<int> states;  // activity id per frame, kBackgroundState in gaps
  uint64_t feature_seed = 0;
  MatrixX<double> frame_features;  // num_frames x feature_dim

  /// Sorted union of all segment starts and ends.
  std::vector<int> critical_timestamps() const;
};

enum class Role : uint8_t { User, Assistant };
enum class Source : uint8_t { Narration, Dialogue };

const char* role_name(Role role);
const char* source_name(Source source);

struct Turn {
  Role role = Role::User;
  int frame = 0;
  std::string text;
  bool operator==(const Turn&) const = default;
};

/// A stream of frames 0..num_frames-1 with dialogue turns attached to
/// frames. Turns at frame i come after frame i; users before assistants.
struct StreamSample {
  double fps = 2.0;
  int num_frames = 0;
  Source source = Source::Narration;
  std::vector<int> states;
  uint64_t feature_seed = 0;
  std::vector<Turn> turns;

  int assistant_turns() const;
  bool operator==(const StreamSample&) const = default;
};

enum class EventKind : uint8_t { Frame, User, Assistant };

struct Event {
  EventKind kind = EventKind::Frame;
  int frame = 0;
  const std::string* text = nullptr;  // turns only; points into the sample
};

/// Frames and turns interleaved in temporal order.
std::vector<Event> events(const StreamSample& sample);

/// Mixes a base seed and an index into an independent stream seed.
uint64_t derive_seed(uint64_t base, uint64_t index);

/// (num_activities + 1) x feature_dim; the last row is the background state.
MatrixX<double> state_embeddings(const WorldConfig& world);

/// Activity ids of each task's ordered steps.
std::vector<std::vector<int>> task_recipes(const WorldConfig& world);

/// Feature of frame i = embedding[state_i] + sigma * N(0, 1).
MatrixX<double> render_features(const WorldConfig& world, const std::vector<int>& states, uint64_t feature_seed);

AnnotatedVideo gen_world(const WorldConfig& world, uint64_t seed);

StreamSample make_narration_stream(const AnnotatedVideo& video);

struct TimedResponse {
  int frame = 0;
  std::string text;
  bool operator==(const TimedResponse&) const = default;
};

struct SynthesizedQuery {
  QueryTemplate query;
  std::vector<TimedResponse> responses;  // one per critical timestamp
};

/// Response of a template at frame t under the annotation timeline.
std::string respond(const AnnotatedVideo& video, const QueryTemplate& query, int frame);

/// Every template answered at every critical timestamp, in seed-shuffled order.
std::vector<SynthesizedQuery> synthesize_dialogue(const AnnotatedVideo& video,
                                                  const std::vector<QueryTemplate>& templates, uint64_t seed);

struct Insertion {
  size_t query = 0;  // index into the synthesized list
  int frame = 0;     // t_r
};

/// Places queries at explicit frames (any order; sorted internally).
StreamSample insert_queries_at(const AnnotatedVideo& video, const std::vector<SynthesizedQuery>& synthesized,
                               std::vector<Insertion> insertions);

/// 1..max_queries queries at distinct random frames.
StreamSample insert_queries(const AnnotatedVideo& video, const std::vector<SynthesizedQuery>& synthesized,
                            int max_queries, uint64_t seed);

inline constexpr int kJsonlVersion = 1;

void write_jsonl(const std::vector<StreamSample>& samples, const std::filesystem::path& path);
std::vector<StreamSample> read_jsonl(const std::filesystem::path& path);

std::string to_jsonl_line(const StreamSample& sample);
StreamSample from_jsonl_line(const std::string& line);  // throws FormatError without line info

}  // namespace live
