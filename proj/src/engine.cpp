#include "live/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <mutex>
#include <queue>
#include <thread>

#include "live/error.hpp"

namespace live {

const char* skip_policy_name(SkipPolicy policy) {
  return policy == SkipPolicy::Block ? "block" : "drop_oldest";
}

SkipPolicy parse_skip_policy(const std::string& name) {
  if (name == "drop_oldest") return SkipPolicy::DropOldest;
  if (name == "block") return SkipPolicy::Block;
  throw ConfigError("unknown skip policy \"" + name + "\" (expected drop_oldest or block)");
}

const char* clock_mode_name(ClockMode mode) {
  return mode == ClockMode::Concurrent ? "concurrent" : "simulated";
}

ClockMode parse_clock_mode(const std::string& name) {
  if (name == "simulated") return ClockMode::Simulated;
  if (name == "concurrent") return ClockMode::Concurrent;
  throw ConfigError("unknown mode \"" + name + "\" (expected simulated or concurrent)");
}

const char* frame_outcome_name(FrameOutcome outcome) {
  switch (outcome) {
    case FrameOutcome::Silent: return "silent";
    case FrameOutcome::Spoke: return "spoke";
    case FrameOutcome::Skipped: return "skipped";
  }
  return "?";
}

void InferenceConfig::validate() const {
  if (!(theta >= 0.0 && theta <= 1.0)) throw ConfigError("theta must be in [0, 1], got " + std::to_string(theta));
  if (max_response_tokens < 1) throw ConfigError("max_response_tokens must be positive");
  if (!(fps > 0) || !std::isfinite(fps)) throw ConfigError("fps must be positive");
  if (!(encode_ms_per_frame >= 0) || !std::isfinite(encode_ms_per_frame)) {
    throw ConfigError("encode_ms_per_frame must be non-negative");
  }
  if (!(decode_ms_per_token >= 0) || !std::isfinite(decode_ms_per_token)) {
    throw ConfigError("decode_ms_per_token must be non-negative");
  }
  if (queue_capacity < 1) throw ConfigError("queue_capacity must be positive");
}

nlohmann::json to_json(const InferenceConfig& c) {
  return {{"theta", c.theta},
          {"max_response_tokens", c.max_response_tokens},
          {"fps", c.fps},
          {"encode_ms_per_frame", c.encode_ms_per_frame},
          {"decode_ms_per_token", c.decode_ms_per_token},
          {"queue_capacity", c.queue_capacity},
          {"skip_policy", skip_policy_name(c.skip_policy)}};
}

InferenceConfig inference_config_from_json(const nlohmann::json& j, InferenceConfig c) {
  c.theta = j.value("theta", c.theta);
  c.max_response_tokens = j.value("max_response_tokens", c.max_response_tokens);
  c.fps = j.value("fps", c.fps);
  c.encode_ms_per_frame = j.value("encode_ms_per_frame", c.encode_ms_per_frame);
  c.decode_ms_per_token = j.value("decode_ms_per_token", c.decode_ms_per_token);
  c.queue_capacity = j.value("queue_capacity", c.queue_capacity);
  if (j.contains("skip_policy")) c.skip_policy = parse_skip_policy(j.at("skip_policy").get<std::string>());
  return c;
}

Decision decide_eos(const Eigen::Ref<const RowVectorX<double>>& probs, int stream_eos, double theta) {
  if (!(theta >= 0.0 && theta <= 1.0)) throw ConfigError("theta must be in [0, 1], got " + std::to_string(theta));
  if (stream_eos < 0 || stream_eos >= probs.size()) throw ShapeError("silence token outside the distribution");
  const double sum = probs.sum();
  if (!(std::abs(sum - 1.0) <= 1e-4)) {
    throw NormalizationError("probabilities sum to " + std::to_string(sum));
  }
  Decision d;
  d.eos_prob = probs(stream_eos);
  if (d.eos_prob >= theta) return d;
  d.silent = false;
  double best = -1;
  for (Index i = 0; i < probs.size(); ++i) {
    if (i != stream_eos && probs(i) > best) {
      best = probs(i);
      d.first_token = static_cast<int>(i);
    }
  }
  return d;
}

int text_argmax(const Eigen::Ref<const RowVectorX<double>>& log_probs, const Vocabulary& vocab) {
  const int skip = vocab.shared_stream_eos() ? -1 : vocab.stream_eos();
  int best = -1;
  for (Index i = 0; i < log_probs.size(); ++i) {
    if (i != skip && (best < 0 || log_probs(i) > log_probs(best))) best = static_cast<int>(i);
  }
  return best;
}

Session::Session(LanguageStream& lm, const Vocabulary& vocab, Scheme scheme, const InferenceConfig& cfg)
    : lm_(lm), vocab_(vocab), scheme_(scheme), cfg_(cfg) {
  cfg_.validate();
  if (lm_.length() != 0) throw ConfigError("session needs an empty language stream");
  const auto prompt = system_prompt_tokens(vocab_);
  require_room(static_cast<Index>(prompt.size()));
  append(prompt);
}

void Session::inject_query(const std::string& text) {
  vocab_.encode(text);  // unknown words fail here, not mid-stream
  pending_.push_back(text);
}

void Session::require_room(Index extra) const {
  if (lm_.length() + extra > lm_.max_context()) {
    throw ContextOverflowError("session cache of " + std::to_string(lm_.length()) + " + " + std::to_string(extra) +
                               " positions exceeds max_context " + std::to_string(lm_.max_context()));
  }
}

MatrixX<double> Session::append(const std::vector<int>& ids) {
  std::vector<Item> items;
  items.reserve(ids.size());
  for (int id : ids) items.push_back(Item::token(id));
  tokens_.insert(tokens_.end(), ids.begin(), ids.end());
  return lm_.append(items);
}

StepOutcome Session::step(int frame_row, const std::vector<int>* forced) {
  const int p = lm_.tokens_per_frame();
  std::vector<int> query_ids;
  for (const std::string& q : pending_) {
    query_ids.push_back(token::kUser);
    for (int id : vocab_.encode(q)) query_ids.push_back(id);
  }
  const Index silent_extra =
      scheme_ == Scheme::PerFrame ? static_cast<Index>(vocab_.per_frame_silent_turn().size()) : 0;
  const Index speak_extra =
      forced != nullptr ? static_cast<Index>(forced->size()) : static_cast<Index>(cfg_.max_response_tokens) + 1;
  require_room(p + static_cast<Index>(query_ids.size()) + std::max(silent_extra, speak_extra));

  const Index before = lm_.length();
  MatrixX<double> lp = lm_.append({Item::frame(frame_row)});
  tokens_.insert(tokens_.end(), static_cast<size_t>(p), token::kFrame);
  if (!query_ids.empty()) lp = append(query_ids);
  pending_.clear();
  if (scheme_ == Scheme::PerFrame) lp = append({token::kAssistant});

  StepOutcome out;
  if (forced != nullptr) {
    out.decision.silent = forced->empty();
    if (!forced->empty()) {
      if (forced->front() != token::kAssistant || forced->back() != token::kTurnEos) {
        throw ConfigError("scripted response must be an assistant turn");
      }
      out.emitted.assign(forced->begin() + (scheme_ == Scheme::PerFrame ? 1 : 0), forced->end());
      out.decision.first_token = out.emitted.front();
      append(out.emitted);
    }
  } else {
    const RowVectorX<double> probs = lp.row(lp.rows() - 1).array().exp();
    out.decision = decide_eos(probs, vocab_.stream_eos(), cfg_.theta);
    if (!out.decision.silent) {
      out.emitted.push_back(out.decision.first_token);
      lp = append({out.decision.first_token});
      while (out.emitted.back() != token::kTurnEos &&
             static_cast<int>(out.emitted.size()) < cfg_.max_response_tokens) {
        const int next = text_argmax(lp.row(lp.rows() - 1), vocab_);
        out.emitted.push_back(next);
        lp = append({next});
      }
    }
  }
  if (out.decision.silent && scheme_ == Scheme::PerFrame) {
    const auto tpl = vocab_.per_frame_silent_turn();
    out.emitted.assign(tpl.begin() + 1, tpl.end());
    append(out.emitted);
  }
  out.appended = lm_.length() - before;
  return out;
}

std::string Session::response_text(const std::vector<int>& emitted) const {
  std::vector<int> words;
  for (int id : emitted) {
    if (id != token::kAssistant && id != token::kTurnEos) words.push_back(id);
  }
  return vocab_.decode(words.empty() ? emitted : words);
}

std::vector<ScheduledQuery> scheduled_queries(const StreamSample& sample) {
  std::vector<ScheduledQuery> out;
  for (const Turn& t : sample.turns) {
    if (t.role == Role::User) out.push_back({t.frame / sample.fps, t.text});
  }
  return out;
}

namespace {

struct Recorder {
  Session& session;
  const std::vector<ScheduledQuery>& queries;
  double interval_ms;
  size_t next_query = 0;

  // Queries that arrived by the frame's arrival attach to that frame.
  void inject_for(int frame) {
    const double arrival = frame * interval_ms;
    while (next_query < queries.size() && queries[next_query].at_time * 1000.0 <= arrival + 1e-9) {
      session.inject_query(queries[next_query].text);
      ++next_query;
    }
  }

  void fill(FrameRecord& r, const StepOutcome& out) {
    r.decision = out.decision.silent ? FrameOutcome::Silent : FrameOutcome::Spoke;
    if (!out.decision.silent) r.response_text = session.response_text(out.emitted);
    r.cache_tokens = session.cache_tokens();
  }
};

void check_queries(const std::vector<ScheduledQuery>& queries, int num_frames, double fps) {
  for (size_t i = 0; i < queries.size(); ++i) {
    const double at = queries[i].at_time;
    if (!(at >= 0) || at > (num_frames - 1) / fps + 1e-9) {
      throw ConfigError("query at " + std::to_string(at) + " s lies outside the stream");
    }
    if (i > 0 && at < queries[i - 1].at_time) throw ConfigError("queries must be sorted by time");
  }
}

void finish(StreamTranscript& t, double stream_ms) {
  StreamStats& s = t.stats;
  double last_end = 0;
  for (const FrameRecord& r : t.frames) {
    if (r.decision == FrameOutcome::Skipped) {
      ++s.frames_skipped;
      continue;
    }
    ++s.frames_processed;
    s.responses += r.decision == FrameOutcome::Spoke ? 1 : 0;
    s.peak_cache_tokens = std::max(s.peak_cache_tokens, r.cache_tokens);
    s.max_lag = std::max(s.max_lag, r.end - r.arrival);
    last_end = std::max(last_end, r.end);
  }
  s.frames = static_cast<int>(t.frames.size());
  s.duration = std::max(stream_ms / 1000.0, last_end);
  s.processed_fps = s.duration > 0 ? s.frames_processed / s.duration : 0.0;
}

StreamTranscript simulate(Session& session, int num_frames, const std::vector<ScheduledQuery>& queries,
                          const InferenceConfig& cfg) {
  const double interval = 1000.0 / cfg.fps;
  StreamTranscript t;
  t.frames.resize(static_cast<size_t>(num_frames));
  for (int i = 0; i < num_frames; ++i) {
    t.frames[static_cast<size_t>(i)].frame = i;
    t.frames[static_cast<size_t>(i)].arrival = i * interval / 1000.0;
  }
  Recorder rec{session, queries, interval};

  // at equal times a finishing decoder is seen before a finished encode,
  // which is seen before a new arrival
  enum Kind { kDecodeDone = 0, kEncodeDone = 1, kArrival = 2 };
  struct Event {
    double time;
    int kind;
    int64_t seq;
    int frame;
    bool operator>(const Event& o) const {
      if (time != o.time) return time > o.time;
      if (kind != o.kind) return kind > o.kind;
      return seq > o.seq;
    }
  };
  std::priority_queue<Event, std::vector<Event>, std::greater<>> events;
  int64_t seq = 0;
  for (int i = 0; i < num_frames; ++i) events.push({i * interval, kArrival, seq++, i});

  std::deque<int> backlog, fifo;
  bool encoder_busy = false, decoder_busy = false;
  int blocked = -1;  // encoded frame waiting for room under the block policy

  auto start_encoder = [&](double now) {
    if (encoder_busy || blocked >= 0 || backlog.empty()) return;
    const int f = backlog.front();
    backlog.pop_front();
    encoder_busy = true;
    events.push({now + cfg.encode_ms_per_frame, kEncodeDone, seq++, f});
  };
  auto start_decoder = [&](double now) {
    if (decoder_busy || fifo.empty()) return;
    const int f = fifo.front();
    fifo.pop_front();
    if (blocked >= 0) {
      fifo.push_back(blocked);
      blocked = -1;
      start_encoder(now);
    }
    rec.inject_for(f);
    const StepOutcome out = session.step(f);
    FrameRecord& r = t.frames[static_cast<size_t>(f)];
    rec.fill(r, out);
    const double cost = static_cast<double>(out.appended) * cfg.decode_ms_per_token;
    r.start = now / 1000.0;
    r.end = (now + cost) / 1000.0;
    decoder_busy = true;
    events.push({now + cost, kDecodeDone, seq++, f});
  };

  while (!events.empty()) {
    const Event e = events.top();
    events.pop();
    switch (e.kind) {
      case kArrival:
        backlog.push_back(e.frame);
        t.stats.peak_backlog = std::max(t.stats.peak_backlog, static_cast<int>(backlog.size()));
        start_encoder(e.time);
        break;
      case kEncodeDone:
        encoder_busy = false;
        if (static_cast<int>(fifo.size()) < cfg.queue_capacity) {
          fifo.push_back(e.frame);
        } else if (cfg.skip_policy == SkipPolicy::DropOldest) {
          FrameRecord& dropped = t.frames[static_cast<size_t>(fifo.front())];
          dropped.decision = FrameOutcome::Skipped;
          dropped.start = dropped.end = e.time / 1000.0;
          fifo.pop_front();
          fifo.push_back(e.frame);
        } else {
          blocked = e.frame;
        }
        t.stats.peak_queue_depth = std::max(t.stats.peak_queue_depth, static_cast<int>(fifo.size()));
        start_decoder(e.time);
        start_encoder(e.time);
        break;
      case kDecodeDone:
        decoder_busy = false;
        start_decoder(e.time);
        break;
    }
  }
  finish(t, num_frames * interval);
  return t;
}

StreamTranscript concurrent(Session& session, int num_frames, const std::vector<ScheduledQuery>& queries,
                            const InferenceConfig& cfg) {
  using Clock = std::chrono::steady_clock;
  using Ms = std::chrono::duration<double, std::milli>;
  const double interval = 1000.0 / cfg.fps;
  StreamTranscript t;
  t.frames.resize(static_cast<size_t>(num_frames));
  for (int i = 0; i < num_frames; ++i) {
    t.frames[static_cast<size_t>(i)].frame = i;
    t.frames[static_cast<size_t>(i)].arrival = i * interval / 1000.0;
  }
  Recorder rec{session, queries, interval};

  std::mutex mu;
  std::condition_variable not_empty, not_full;
  std::deque<int> fifo;
  bool closed = false, aborted = false;
  const auto t0 = Clock::now();
  auto now_ms = [&] { return Ms(Clock::now() - t0).count(); };

  std::thread encoder([&] {
    for (int i = 0; i < num_frames; ++i) {
      std::this_thread::sleep_until(t0 + std::chrono::duration_cast<Clock::duration>(Ms(i * interval)));
      std::this_thread::sleep_for(Ms(cfg.encode_ms_per_frame));
      std::unique_lock lock(mu);
      if (aborted) break;
      const int arrived = std::min(num_frames, static_cast<int>(now_ms() / interval) + 1);
      t.stats.peak_backlog = std::max(t.stats.peak_backlog, arrived - i);
      if (static_cast<int>(fifo.size()) >= cfg.queue_capacity) {
        if (cfg.skip_policy == SkipPolicy::DropOldest) {
          FrameRecord& dropped = t.frames[static_cast<size_t>(fifo.front())];
          dropped.decision = FrameOutcome::Skipped;
          dropped.start = dropped.end = now_ms() / 1000.0;
          fifo.pop_front();
        } else {
          not_full.wait(lock, [&] { return aborted || static_cast<int>(fifo.size()) < cfg.queue_capacity; });
          if (aborted) break;
        }
      }
      fifo.push_back(i);
      t.stats.peak_queue_depth = std::max(t.stats.peak_queue_depth, static_cast<int>(fifo.size()));
      not_empty.notify_one();
    }
    std::lock_guard lock(mu);
    closed = true;
    not_empty.notify_one();
  });

  std::exception_ptr failure;
  try {
    while (true) {
      int f;
      {
        std::unique_lock lock(mu);
        not_empty.wait(lock, [&] { return closed || !fifo.empty(); });
        if (fifo.empty()) break;
        f = fifo.front();
        fifo.pop_front();
        not_full.notify_one();
      }
      const double start = now_ms();
      rec.inject_for(f);
      const StepOutcome out = session.step(f);
      const double modeled = static_cast<double>(out.appended) * cfg.decode_ms_per_token;
      const double spent = now_ms() - start;
      if (spent < modeled) std::this_thread::sleep_for(Ms(modeled - spent));
      std::lock_guard lock(mu);
      FrameRecord& r = t.frames[static_cast<size_t>(f)];
      rec.fill(r, out);
      r.start = start / 1000.0;
      r.end = now_ms() / 1000.0;
    }
  } catch (...) {
    failure = std::current_exception();
    std::lock_guard lock(mu);
    aborted = true;
    not_full.notify_all();
  }
  encoder.join();
  if (failure) std::rethrow_exception(failure);
  finish(t, num_frames * interval);
  return t;
}

}  // namespace

StreamTranscript run_stream(LanguageStream& lm, const Vocabulary& vocab, Scheme scheme, int num_frames,
                            const std::vector<ScheduledQuery>& queries, const InferenceConfig& cfg, ClockMode mode) {
  cfg.validate();
  if (num_frames < 1) throw ConfigError("run_stream: no frames");
  check_queries(queries, num_frames, cfg.fps);
  Session session(lm, vocab, scheme, cfg);
  return mode == ClockMode::Simulated ? simulate(session, num_frames, queries, cfg)
                                      : concurrent(session, num_frames, queries, cfg);
}

nlohmann::json to_json(const FrameRecord& r) {
  return {{"frame", r.frame},
          {"arrival", r.arrival},
          {"decision", frame_outcome_name(r.decision)},
          {"response", r.response_text},
          {"start", r.start},
          {"end", r.end},
          {"cache_tokens", r.cache_tokens}};
}

nlohmann::json to_json(const StreamStats& s) {
  return {{"frames", s.frames},
          {"frames_processed", s.frames_processed},
          {"frames_skipped", s.frames_skipped},
          {"responses", s.responses},
          {"peak_queue_depth", s.peak_queue_depth},
          {"peak_backlog", s.peak_backlog},
          {"peak_cache_tokens", s.peak_cache_tokens},
          {"duration", s.duration},
          {"processed_fps", s.processed_fps},
          {"max_lag", s.max_lag}};
}

void write_transcript_jsonl(const StreamTranscript& transcript, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const FrameRecord& r : transcript.frames) out << to_json(r).dump() << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace live
