#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <vector>

#include "live/assemble.hpp"
#include "live/data.hpp"
#include "live/model.hpp"

namespace live {

struct TrainConfig {
  Scheme scheme = Scheme::Streaming;
  double stream_loss_weight = 1.0;  // w
  double learning_rate = 3e-4;
  int epochs = 2;
  int batch_size = 1;  // samples per optimizer step
  uint64_t seed = 0;
  Index chunk_tokens = 0;  // train on windows of at most this many positions; 0 = whole sequences
  double clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;

  void validate() const;  // throws ConfigError
};

struct StepRecord {
  int step = 0;
  int epoch = 0;
  double lm_loss = 0;   // batch mean of per-sample LM parts
  double eos_loss = 0;  // batch mean of per-sample unweighted silence parts
  double total = 0;     // lm_loss + w * eos_loss
  double lr = 0;
  int64_t tokens = 0;   // positions processed in this step
};

struct TrainResult {
  std::vector<StepRecord> steps;
  std::vector<double> epoch_mean_loss;  // mean per-sample total loss, one per epoch
  int64_t tokens_per_epoch = 0;
};

/// Adam state for one set of parameters.
template <typename Scalar>
struct AdamState {
  std::vector<MatrixX<Scalar>> m, v;
  int64_t t = 0;
};

/// One Adam update from the gradients currently held in params, after
/// clipping their global norm. Returns the pre-clip norm.
template <typename Scalar>
double adam_step(ModelParams<Scalar>& params, AdamState<Scalar>& state, const TrainConfig& cfg);

/// Pre-assembled training example.
template <typename Scalar>
struct TrainExample {
  AssembledSequence seq;
  LossTargets targets;
  MatrixX<Scalar> features;
};

template <typename Scalar>
std::vector<TrainExample<Scalar>> prepare_examples(const std::vector<StreamSample>& samples, const WorldConfig& world,
                                                   const Vocabulary& vocab, const ModelConfig& model,
                                                   const TrainConfig& cfg);

/// Loss and gradient of one example, accumulated into params' grads scaled
/// by grad_scale. Returns (lm, eos) parts of the example's loss.
template <typename Scalar>
std::pair<double, double> accumulate_example(ModelParams<Scalar>& params, const TrainExample<Scalar>& ex,
                                             const TrainConfig& cfg, Scalar grad_scale);

using StepCallback = std::function<void(const StepRecord&)>;

/// Deterministic in (params, samples, cfg). Writes one CSV row per step to
/// log when given; throws DivergenceError on a non-finite loss.
template <typename Scalar>
TrainResult train(ModelParams<Scalar>& params, const std::vector<StreamSample>& samples, const WorldConfig& world,
                  const Vocabulary& vocab, const TrainConfig& cfg, std::ostream* log = nullptr,
                  const StepCallback& on_step = {});

inline constexpr const char* kTrainLogHeader = "step,lm_loss,eos_loss,total,lr,tokens";

}  // namespace live
