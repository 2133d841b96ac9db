#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "live/assemble.hpp"
#include "live/data.hpp"
#include "live/model.hpp"
#include "live/vocab.hpp"

namespace live {

/// Next-token distributions over a growing context. Decoding sessions and the
/// metrics only talk to this interface, so hand-built fixtures can stand in
/// for a trained model.
class LanguageStream {
 public:
  virtual ~LanguageStream() = default;
  virtual int tokens_per_frame() const = 0;
  virtual Index max_context() const = 0;
  virtual Index length() const = 0;
  /// Appends items and returns natural-log probabilities, one row per new
  /// position. Frame items index the stream's own feature rows.
  virtual MatrixX<double> append(const std::vector<Item>& items) = 0;
  /// Drops every position at or after `length`.
  virtual void truncate(Index length) = 0;
};

/// LanguageStream over a model and one stream's frame features, backed by a
/// KV cache.
template <typename Scalar>
class ModelStream final : public LanguageStream {
 public:
  ModelStream(const ModelParams<Scalar>& params, MatrixX<Scalar> frames)
      : params_(params), frames_(std::move(frames)), cache_(params.config) {}

  int tokens_per_frame() const override { return params_.config.tokens_per_frame; }
  Index max_context() const override { return params_.config.max_context; }
  Index length() const override { return cache_.length(); }

  MatrixX<double> append(const std::vector<Item>& items) override {
    ModelInput<Scalar> in;
    in.items = items;
    Index n_frames = 0;
    for (const Item& it : items) n_frames += it.kind == ItemKind::Frame ? 1 : 0;
    in.frames.resize(n_frames, frames_.cols());
    Index r = 0;
    for (Item& it : in.items) {
      if (it.kind != ItemKind::Frame) continue;
      if (it.value < 0 || it.value >= frames_.rows()) throw ShapeError("frame reference out of range");
      in.frames.row(r) = frames_.row(it.value);
      it.value = static_cast<int>(r++);
    }
    MatrixX<double> logits = forward_step(params_, cache_, in).template cast<double>();
    for (Index i = 0; i < logits.rows(); ++i) {
      const double m = logits.row(i).maxCoeff();
      const double lse = m + std::log((logits.row(i).array() - m).exp().sum());
      logits.row(i).array() -= lse;
    }
    return logits;
  }

  void truncate(Index length) override { cache_.truncate(length); }

 private:
  const ModelParams<Scalar>& params_;
  MatrixX<Scalar> frames_;
  KVCache<Scalar> cache_;
};

enum class SkipPolicy : uint8_t { DropOldest, Block };
const char* skip_policy_name(SkipPolicy policy);
SkipPolicy parse_skip_policy(const std::string& name);  // throws ConfigError

struct InferenceConfig {
  double theta = 0.6;
  int max_response_tokens = 16;  // generated tokens per response, role marker and turn EOS included
  double fps = 2.0;
  double encode_ms_per_frame = 5.0;
  double decode_ms_per_token = 30.0;  // charged per position the decoder appends to the cache
  int queue_capacity = 4;
  SkipPolicy skip_policy = SkipPolicy::DropOldest;

  void validate() const;  // throws ConfigError
};

nlohmann::json to_json(const InferenceConfig& cfg);
InferenceConfig inference_config_from_json(const nlohmann::json& j, InferenceConfig base = {});

struct Decision {
  bool silent = true;
  int first_token = -1;  // set when speaking
  double eos_prob = 0;
};

/// Silent iff P(silence token) >= theta; otherwise speak the most likely
/// other token. Throws ConfigError for theta outside [0, 1] and
/// NormalizationError when the probabilities do not sum to one within 1e-4.
Decision decide_eos(const Eigen::Ref<const RowVectorX<double>>& probs, int stream_eos, double theta);

/// Most likely token for response text; the dedicated silence token is a
/// label, never a word, so it is excluded.
int text_argmax(const Eigen::Ref<const RowVectorX<double>>& log_probs, const Vocabulary& vocab);

struct StepOutcome {
  Decision decision;
  std::vector<int> emitted;  // tokens appended after the decision point
  Index appended = 0;        // cache positions added by the step
};

/// One decoding session over a LanguageStream. The system prompt is
/// prefilled on construction; each step appends a frame, any pending user
/// queries, then either nothing (streaming silence), the silent template
/// (per_frame), or a greedy response.
class Session {
 public:
  Session(LanguageStream& lm, const Vocabulary& vocab, Scheme scheme, const InferenceConfig& cfg);

  /// Queued until the next frame has been appended.
  void inject_query(const std::string& text);

  /// With `forced` set the decision is scripted: empty means silent,
  /// otherwise the tokens of an assistant turn (role marker, words, turn EOS).
  StepOutcome step(int frame_row, const std::vector<int>* forced = nullptr);

  Index cache_tokens() const { return lm_.length(); }
  const std::vector<int>& tokens() const { return tokens_; }  // kFrame on frame slots
  Scheme scheme() const { return scheme_; }

  /// Words of a response without its role marker and turn EOS.
  std::string response_text(const std::vector<int>& emitted) const;

 private:
  MatrixX<double> append(const std::vector<int>& ids);
  void require_room(Index extra) const;

  LanguageStream& lm_;
  const Vocabulary& vocab_;
  Scheme scheme_;
  InferenceConfig cfg_;
  std::vector<std::string> pending_;
  std::vector<int> tokens_;
};

struct ScheduledQuery {
  double at_time = 0;  // seconds
  std::string text;
};

/// User turns of a sample as queries arriving with their frame.
std::vector<ScheduledQuery> scheduled_queries(const StreamSample& sample);

enum class ClockMode : uint8_t { Simulated, Concurrent };
const char* clock_mode_name(ClockMode mode);
ClockMode parse_clock_mode(const std::string& name);

enum class FrameOutcome : uint8_t { Silent, Spoke, Skipped };
const char* frame_outcome_name(FrameOutcome outcome);

struct FrameRecord {
  int frame = 0;
  double arrival = 0;  // seconds
  FrameOutcome decision = FrameOutcome::Silent;
  std::string response_text;
  double start = 0;  // decoder picked the frame up
  double end = 0;    // decoder finished its step
  Index cache_tokens = 0;
};

struct StreamStats {
  int frames = 0;
  int frames_processed = 0;
  int frames_skipped = 0;
  int responses = 0;
  int peak_queue_depth = 0;
  int peak_backlog = 0;  // arrived frames waiting for the encoder (grows under block)
  Index peak_cache_tokens = 0;
  double duration = 0;   // seconds until the last step finished, at least the stream length
  double processed_fps = 0;
  double max_lag = 0;    // worst arrival-to-finish delay, seconds
};

struct StreamTranscript {
  std::vector<FrameRecord> frames;
  StreamStats stats;
};

/// Feeds frames arriving at i / fps through an encoder worker and a bounded
/// FIFO into a decoding session. Simulated mode uses a discrete-event clock
/// and is deterministic; concurrent mode runs the encoder on its own thread
/// against the wall clock.
StreamTranscript run_stream(LanguageStream& lm, const Vocabulary& vocab, Scheme scheme, int num_frames,
                            const std::vector<ScheduledQuery>& queries, const InferenceConfig& cfg,
                            ClockMode mode = ClockMode::Simulated);

nlohmann::json to_json(const FrameRecord& record);
nlohmann::json to_json(const StreamStats& stats);

/// One JSON record per frame.
void write_transcript_jsonl(const StreamTranscript& transcript, const std::filesystem::path& path);

}  // namespace live
