#include "live/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

#include "live/error.hpp"

namespace live {

namespace {

struct TurnSpan {
  int frame = 0;
  Index role_pos = 0;  // assistant role marker
  Index eos_pos = 0;   // turn EOS
};

// Gold layout plus, per frame, the position whose distribution decides
// whether to speak: the frame's last slot or its last user token, or the
// role marker that always follows in the per-frame layout.
struct Layout {
  AssembledSequence seq;
  std::vector<Index> decision;
  std::vector<Index> frame_start;
  std::vector<Index> frame_end;  // after the frame's slots and user turns
  std::vector<TurnSpan> turns;
};

Layout make_layout(const StreamSample& sample, const Vocabulary& vocab, int p, Scheme scheme) {
  Layout L;
  L.seq = assemble(sample, vocab, p, scheme);
  const auto& s = L.seq;
  const Index n = s.length();
  L.decision.assign(static_cast<size_t>(sample.num_frames), -1);
  L.frame_start.assign(static_cast<size_t>(sample.num_frames), -1);
  L.frame_end.assign(static_cast<size_t>(sample.num_frames), -1);
  int frame = -1;
  for (Index j = 0; j < n; ++j) {
    const size_t u = static_cast<size_t>(j);
    if (s.frame_index[u] >= 0) {
      frame = s.frame_index[u];
      if (!s.frame_last[u]) continue;
      Index e = j + 1;
      while (e < n && s.frame_index[static_cast<size_t>(e)] < 0 && s.tokens[static_cast<size_t>(e)] != token::kAssistant) ++e;
      L.frame_start[static_cast<size_t>(frame)] = j + 1 - p;
      L.frame_end[static_cast<size_t>(frame)] = e;
      if (scheme == Scheme::PerFrame) {
        if (e >= n || s.tokens[static_cast<size_t>(e)] != token::kAssistant) {
          throw FormatError("per-frame layout without a turn after frame " + std::to_string(frame));
        }
        L.decision[static_cast<size_t>(frame)] = e;
      } else {
        L.decision[static_cast<size_t>(frame)] = e - 1;
      }
      continue;
    }
    if (s.tokens[u] != token::kAssistant || !s.text_target[u]) continue;
    const bool silent_turn = scheme == Scheme::PerFrame && j + 2 < n &&
                             s.tokens[u + 1] == vocab.stream_eos() && s.tokens[u + 2] == token::kTurnEos;
    if (silent_turn) continue;
    Index e = j + 1;
    while (e < n && s.tokens[static_cast<size_t>(e)] != token::kTurnEos) ++e;
    if (e >= n) throw FormatError("assistant turn without turn EOS");
    L.turns.push_back({frame, j, e});
    j = e;
  }
  return L;
}

// Feeds gold items into the stream, keeping every returned row.
struct GoldFeed {
  LanguageStream& lm;
  const AssembledSequence& seq;
  MatrixX<double> rows;
  size_t next_item = 0;
  static constexpr Index kBatch = 256;

  GoldFeed(LanguageStream& stream, const AssembledSequence& s, int vocab_size)
      : lm(stream), seq(s), rows(s.length(), vocab_size) {}

  Index fed() const { return next_item < seq.items.size() ? seq.item_start[next_item] : seq.length(); }

  void to(Index end) {
    while (fed() < end) {
      const Index from = fed();
      std::vector<Item> batch;
      size_t i = next_item;
      while (i < seq.items.size() && seq.item_start[i] < end && seq.item_start[i] - from < kBatch) {
        batch.push_back(seq.items[i]);
        ++i;
      }
      if (lm.length() != from) throw GraphStateError("gold feed out of step with the stream");
      const MatrixX<double> lp = lm.append(batch);
      rows.middleRows(from, lp.rows()) = lp;
      next_item = i;
    }
  }

  RowVectorX<double> probs(Index j) {
    to(j + 1);
    return rows.row(j).array().exp();
  }
};

}  // namespace

double SampleEvaluation::ppl() const {
  if (nll_tokens == 0) throw MetricError("perplexity undefined without response tokens");
  return std::exp(nll_sum / static_cast<double>(nll_tokens));
}

SampleEvaluation evaluate_sample(LanguageStream& lm, const StreamSample& sample, const Vocabulary& vocab,
                                 Scheme scheme, double theta) {
  if (!(theta >= 0.0 && theta <= 1.0)) throw ConfigError("theta must be in [0, 1], got " + std::to_string(theta));
  if (lm.length() != 0) throw ConfigError("evaluate_sample needs an empty language stream");
  const int p = lm.tokens_per_frame();
  const Layout L = make_layout(sample, vocab, p, scheme);
  if (L.turns.empty()) throw MetricError("sample has no assistant turn");
  if (L.seq.length() > lm.max_context()) {
    throw ContextOverflowError(std::string(scheme_name(scheme)) + " layout of " + std::to_string(L.seq.length()) +
                               " positions exceeds max_context " + std::to_string(lm.max_context()));
  }
  const auto& tokens = L.seq.tokens;
  const int eos = vocab.stream_eos();
  const std::vector<int> tpl = vocab.per_frame_silent_turn();
  GoldFeed gold(lm, L.seq, vocab.size());
  auto decide = [&](Index j) { return decide_eos(gold.probs(j), eos, theta); };
  auto tok = [&](Index j) { return tokens[static_cast<size_t>(j)]; };

  SampleEvaluation ev;
  for (size_t k = 0; k < L.turns.size(); ++k) {
    const TurnSpan& t = L.turns[k];
    const int w = k == 0 ? 0 : L.turns[k - 1].frame + 1;
    int window_end = sample.num_frames;
    for (size_t q = k + 1; q < L.turns.size(); ++q) {
      if (L.turns[q].frame > t.frame) {
        window_end = L.turns[q].frame;
        break;
      }
    }

    // decisions over the window up to t*, all on gold context
    const bool has_window = w <= t.frame;
    const Index dpos = has_window ? L.decision[static_cast<size_t>(t.frame)] : t.role_pos;
    int speak = has_window ? -1 : t.frame;  // a turn sharing its frame with the previous one
    std::vector<uint8_t> decision_ok;
    if (has_window) {
      for (int s = w; s <= t.frame; ++s) {
        const Index pos = L.decision[static_cast<size_t>(s)];
        const Decision d = decide(pos);
        decision_ok.push_back(s < t.frame ? d.silent : !d.silent && d.first_token == tok(pos + 1));
        if (!d.silent && speak < 0) speak = s;
      }
    }

    if (speak < 0) {
      // silent at t*: continue the stream without the gold response
      const Index base = lm.length();
      if (base != dpos + 1) throw GraphStateError("evaluation stream out of step");
      auto silent_tail = [&] {
        if (scheme == Scheme::PerFrame) {
          std::vector<Item> tail;
          for (size_t i = 1; i < tpl.size(); ++i) tail.push_back(Item::token(tpl[i]));
          lm.append(tail);
        }
      };
      silent_tail();
      for (int s = t.frame + 1; s < window_end && speak < 0; ++s) {
        std::vector<Item> items = {Item::frame(s)};
        for (Index j = L.frame_start[static_cast<size_t>(s)] + p; j < L.frame_end[static_cast<size_t>(s)]; ++j) {
          items.push_back(Item::token(tok(j)));
        }
        if (scheme == Scheme::PerFrame) items.push_back(Item::token(token::kAssistant));
        const MatrixX<double> lp = lm.append(items);
        const Decision d = decide_eos(lp.row(lp.rows() - 1).array().exp(), eos, theta);
        if (!d.silent) {
          speak = s;
        } else {
          silent_tail();
        }
      }
      lm.truncate(base);
      if (speak < 0) speak = window_end;
    }

    // the response is generated from the decision point at t*, which
    // predicts the role marker unless the layout already holds it
    int lg_prefix = 0;
    bool lg_ok = true;
    std::vector<uint8_t> text_ok;
    for (Index j = dpos; j < t.eos_pos; ++j) {
      gold.to(j + 1);
      if (j >= t.role_pos) {
        ev.nll_sum -= gold.rows(j, tok(j + 1));
        ev.nll_tokens += 1;
      }
      const bool hit = text_argmax(gold.rows.row(j), vocab) == tok(j + 1);
      lg_ok = lg_ok && hit;
      lg_prefix += lg_ok ? 1 : 0;
      text_ok.push_back(hit ? 1 : 0);
    }
    ev.lg_match.push_back(static_cast<double>(lg_prefix) / static_cast<double>(t.eos_pos - dpos));

    // fluency slots: window decisions, then text after the decision point
    if (has_window) text_ok.erase(text_ok.begin());
    decision_ok.insert(decision_ok.end(), text_ok.begin(), text_ok.end());
    size_t prefix = 0;
    while (prefix < decision_ok.size() && decision_ok[prefix]) ++prefix;
    ev.fluency.push_back(static_cast<double>(prefix) / static_cast<double>(decision_ok.size()));

    ev.expected_frame.push_back(t.frame);
    ev.speak_frame.push_back(speak);
    ev.time_diff.push_back(std::abs(speak - t.frame) / sample.fps);
  }

  gold.to(L.seq.length());
  for (Index d : L.decision) ev.decision_eos_prob.push_back(std::exp(gold.rows(d, eos)));
  return ev;
}

namespace {

double mean(const std::vector<double>& v) {
  if (v.empty()) throw MetricError("metric undefined without turns");
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

double lm_ppl(LanguageStream& lm, const StreamSample& sample, const Vocabulary& vocab, Scheme scheme) {
  return evaluate_sample(lm, sample, vocab, scheme, 1.0).ppl();
}

double lg_match(LanguageStream& lm, const StreamSample& sample, const Vocabulary& vocab, Scheme scheme) {
  return mean(evaluate_sample(lm, sample, vocab, scheme, 1.0).lg_match);
}

double time_diff(LanguageStream& lm, const StreamSample& sample, const Vocabulary& vocab, Scheme scheme,
                 double theta) {
  return mean(evaluate_sample(lm, sample, vocab, scheme, theta).time_diff);
}

double fluency(LanguageStream& lm, const StreamSample& sample, const Vocabulary& vocab, Scheme scheme,
               double theta) {
  return mean(evaluate_sample(lm, sample, vocab, scheme, theta).fluency);
}

nlohmann::json to_json(const MetricsReport& r) {
  return {{"theta", r.theta},
          {"lm_ppl", r.lm_ppl},
          {"lg_match", r.lg_match},
          {"time_diff", r.time_diff},
          {"fluency", r.fluency},
          {"n_samples", r.n_samples},
          {"n_turns", r.n_turns},
          {"throughput",
           {{"fps", r.throughput.fps},
            {"skips", r.throughput.skips},
            {"peak_cache_tokens", r.throughput.peak_cache_tokens}}}};
}

template <typename Scalar>
MetricsReport evaluate_dataset(const ModelParams<Scalar>& params, const std::vector<StreamSample>& samples,
                               const WorldConfig& world, const Vocabulary& vocab, Scheme scheme, double theta,
                               int workers) {
  std::vector<int> eligible;
  for (size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].assistant_turns() > 0) eligible.push_back(static_cast<int>(i));
  }
  if (eligible.empty()) throw MetricError("no sample with an assistant turn");

  std::vector<SampleEvaluation> results(eligible.size());
  std::vector<std::exception_ptr> errors(eligible.size());
  auto run = [&](size_t k) {
    try {
      const StreamSample& s = samples[static_cast<size_t>(eligible[k])];
      ModelStream<Scalar> lm(params, render_features(world, s.states, s.feature_seed).template cast<Scalar>());
      results[k] = evaluate_sample(lm, s, vocab, scheme, theta);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  };
  if (workers <= 0) workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  workers = std::min<int>(workers, static_cast<int>(eligible.size()));
  if (workers <= 1) {
    for (size_t k = 0; k < eligible.size(); ++k) run(k);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (size_t k = static_cast<size_t>(w); k < eligible.size(); k += static_cast<size_t>(workers)) run(k);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  MetricsReport r;
  r.theta = theta;
  std::vector<double> lg, td, fl;
  double ppl = 0;
  for (const auto& ev : results) {
    ppl += ev.ppl();
    lg.insert(lg.end(), ev.lg_match.begin(), ev.lg_match.end());
    td.insert(td.end(), ev.time_diff.begin(), ev.time_diff.end());
    fl.insert(fl.end(), ev.fluency.begin(), ev.fluency.end());
  }
  r.n_samples = static_cast<int>(results.size());
  r.n_turns = static_cast<int>(lg.size());
  r.lm_ppl = ppl / r.n_samples;
  r.lg_match = mean(lg);
  r.time_diff = mean(td);
  r.fluency = mean(fl);
  return r;
}

template <typename Scalar>
StreamTranscript stream_sample(const ModelParams<Scalar>& params, const StreamSample& sample,
                               const WorldConfig& world, const Vocabulary& vocab, Scheme scheme,
                               const InferenceConfig& cfg, ClockMode mode) {
  ModelStream<Scalar> lm(params, render_features(world, sample.states, sample.feature_seed).template cast<Scalar>());
  return run_stream(lm, vocab, scheme, sample.num_frames, scheduled_queries(sample), cfg, mode);
}

template <typename Scalar>
std::vector<AblationRow> run_ablation(const std::vector<AblationEntry<Scalar>>& entries,
                                      const std::vector<StreamSample>& samples, const WorldConfig& world,
                                      const Vocabulary& vocab, const InferenceConfig& cfg,
                                      const StreamSample& throughput_sample) {
  std::vector<AblationRow> rows;
  for (const auto& e : entries) {
    if (e.params == nullptr) throw ConfigError("ablation entry \"" + e.name + "\" has no checkpoint");
    AblationRow row;
    row.name = e.name;
    row.scheme = e.scheme;
    row.train_tokens = e.train_tokens;
    row.metrics = evaluate_dataset(*e.params, samples, world, vocab, e.scheme, cfg.theta);
    const StreamTranscript t = stream_sample(*e.params, throughput_sample, world, vocab, e.scheme, cfg);
    row.metrics.throughput = {t.stats.processed_fps, t.stats.frames_skipped, t.stats.peak_cache_tokens};
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

std::string fmt(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "method,scheme,lm_ppl,lg_match,time_diff,fluency,train_tokens,peak_cache_tokens,fps,skips\n";
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    out << r.name << ',' << scheme_name(r.scheme) << ',' << fmt(m.lm_ppl, 6) << ',' << fmt(m.lg_match, 6) << ','
        << fmt(m.time_diff, 6) << ',' << fmt(m.fluency, 6) << ',' << r.train_tokens << ','
        << m.throughput.peak_cache_tokens << ',' << fmt(m.throughput.fps, 4) << ',' << m.throughput.skips << '\n';
  }
  return out.str();
}

std::string ablation_markdown(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "| Method | LM-PPL | TimeDiff | Fluency | LG-Match | #Training Token | Peak cache tokens | FPS | Skips |\n"
      << "|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    out << "| " << r.name << " | " << fmt(m.lm_ppl, 2) << " | " << fmt(m.time_diff, 2) << " | "
        << fmt(100 * m.fluency, 1) << "% | " << fmt(100 * m.lg_match, 1) << "% | " << r.train_tokens << " | "
        << m.throughput.peak_cache_tokens << " | " << fmt(m.throughput.fps, 2) << " | " << m.throughput.skips
        << " |\n";
  }
  return out.str();
}

void write_ablation(const std::vector<AblationRow>& rows, const std::filesystem::path& dir) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json e = to_json(r.metrics);
    e["name"] = r.name;
    e["scheme"] = scheme_name(r.scheme);
    e["train_tokens"] = r.train_tokens;
    j.push_back(std::move(e));
  }
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    out << text;
  };
  write("metrics.json", j.dump(2) + "\n");
  write("ablation.csv", ablation_csv(rows));
  write("ablation.md", ablation_markdown(rows));
}

template MetricsReport evaluate_dataset(const ModelParams<float>&, const std::vector<StreamSample>&,
                                        const WorldConfig&, const Vocabulary&, Scheme, double, int);
template MetricsReport evaluate_dataset(const ModelParams<double>&, const std::vector<StreamSample>&,
                                        const WorldConfig&, const Vocabulary&, Scheme, double, int);
template StreamTranscript stream_sample(const ModelParams<float>&, const StreamSample&, const WorldConfig&,
                                        const Vocabulary&, Scheme, const InferenceConfig&, ClockMode);
template StreamTranscript stream_sample(const ModelParams<double>&, const StreamSample&, const WorldConfig&,
                                        const Vocabulary&, Scheme, const InferenceConfig&, ClockMode);
template std::vector<AblationRow> run_ablation(const std::vector<AblationEntry<float>>&,
                                               const std::vector<StreamSample>&, const WorldConfig&,
                                               const Vocabulary&, const InferenceConfig&, const StreamSample&);
template std::vector<AblationRow> run_ablation(const std::vector<AblationEntry<double>>&,
                                               const std::vector<StreamSample>&, const WorldConfig&,
                                               const Vocabulary&, const InferenceConfig&, const StreamSample&);

}  // namespace live
