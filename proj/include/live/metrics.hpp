#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "live/assemble.hpp"
#include "live/data.hpp"
#include "live/engine.hpp"
#include "live/model.hpp"

namespace live {

/// Teacher-forced evaluation of one sample. Turns are the assistant turns in
/// order; turn k is expected at frame t*_k and its window runs from the frame
/// after turn k-1 to the frame of turn k+1 (or the stream end).
struct SampleEvaluation {
  double nll_sum = 0;    // over response words and turn EOS at their gold positions
  int64_t nll_tokens = 0;
  std::vector<double> lg_match;   // per turn
  std::vector<double> time_diff;  // per turn, seconds
  std::vector<double> fluency;    // per turn
  std::vector<int> expected_frame;
  std::vector<int> speak_frame;   // first frame with Speak, or the window end
  std::vector<double> decision_eos_prob;  // P(silence) at every gold decision point, in frame order

  int turns() const { return static_cast<int>(expected_frame.size()); }
  double ppl() const;  // throws MetricError without response tokens
};

/// One pass over the gold layout of `scheme`. The stream must be empty and
/// hold the sample's frame features. Throws MetricError when the sample has
/// no assistant turn.
SampleEvaluation evaluate_sample(LanguageStream& lm, const StreamSample& sample, const Vocabulary& vocab,
                                 Scheme scheme, double theta);

/// exp(mean NLL) over response words and turn EOS.
double lm_ppl(LanguageStream& lm, const StreamSample& sample, const Vocabulary& vocab, Scheme scheme);
/// Mean over turns of correct-prefix length / gold length of the greedy
/// continuation from the decision point at t*: the role marker where the
/// model has to produce it, then words and turn EOS.
double lg_match(LanguageStream& lm, const StreamSample& sample, const Vocabulary& vocab, Scheme scheme);
/// Mean over turns of |speak frame - expected frame| / fps.
double time_diff(LanguageStream& lm, const StreamSample& sample, const Vocabulary& vocab, Scheme scheme,
                 double theta);
/// Mean over turns of the correct-prefix ratio over the turn's slots: one
/// silence slot per window frame before t*, then the response tokens scored
/// by lg_match, the first of them through the silence decision.
double fluency(LanguageStream& lm, const StreamSample& sample, const Vocabulary& vocab, Scheme scheme,
               double theta);

struct Throughput {
  double fps = 0;
  int skips = 0;
  Index peak_cache_tokens = 0;
};

struct MetricsReport {
  double theta = 0;
  double lm_ppl = 0;     // mean over samples
  double lg_match = 0;   // mean over turns
  double time_diff = 0;  // mean over turns, seconds
  double fluency = 0;    // mean over turns
  int n_samples = 0;
  int n_turns = 0;
  Throughput throughput;
};

nlohmann::json to_json(const MetricsReport& report);

/// Metrics of a model over a dataset; samples without assistant turns are
/// skipped. Samples run on parallel workers, results are reduced in order.
template <typename Scalar>
MetricsReport evaluate_dataset(const ModelParams<Scalar>& params, const std::vector<StreamSample>& samples,
                               const WorldConfig& world, const Vocabulary& vocab, Scheme scheme, double theta,
                               int workers = 0);

/// Simulated run_stream of one sample.
template <typename Scalar>
StreamTranscript stream_sample(const ModelParams<Scalar>& params, const StreamSample& sample,
                               const WorldConfig& world, const Vocabulary& vocab, Scheme scheme,
                               const InferenceConfig& cfg, ClockMode mode = ClockMode::Simulated);

template <typename Scalar>
struct AblationEntry {
  std::string name;
  Scheme scheme = Scheme::Streaming;
  const ModelParams<Scalar>* params = nullptr;
  int64_t train_tokens = 0;
};

struct AblationRow {
  std::string name;
  Scheme scheme = Scheme::Streaming;
  MetricsReport metrics;
  int64_t train_tokens = 0;
};

/// Evaluates every entry on the same samples; throughput comes from a
/// simulated stream of `throughput_sample`.
template <typename Scalar>
std::vector<AblationRow> run_ablation(const std::vector<AblationEntry<Scalar>>& entries,
                                      const std::vector<StreamSample>& samples, const WorldConfig& world,
                                      const Vocabulary& vocab, const InferenceConfig& cfg,
                                      const StreamSample& throughput_sample);

/// metrics.json, ablation.csv and ablation.md in `dir`.
void write_ablation(const std::vector<AblationRow>& rows, const std::filesystem::path& dir);
std::string ablation_markdown(const std::vector<AblationRow>& rows);
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace live
