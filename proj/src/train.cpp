#include "live/train.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>

#include "live/error.hpp"

namespace live {

void TrainConfig::validate() const {
  if (!(stream_loss_weight >= 0)) throw ConfigError("stream_loss_weight must be non-negative");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (chunk_tokens < 0) throw ConfigError("chunk_tokens must be non-negative");
  if (!(clip_norm > 0)) throw ConfigError("clip_norm must be positive");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw ConfigError("Adam betas must be in [0, 1)");
}

template <typename Scalar>
double adam_step(ModelParams<Scalar>& params, AdamState<Scalar>& state, const TrainConfig& cfg) {
  auto named = params.named_tensors();
  if (state.m.empty()) {
    for (auto& [name, t] : named) {
      state.m.push_back(MatrixX<Scalar>::Zero(t->rows(), t->cols()));
      state.v.push_back(MatrixX<Scalar>::Zero(t->rows(), t->cols()));
    }
  }
  double sq = 0;
  for (auto& [name, t] : named) {
    t->ensure_grad();
    sq += static_cast<double>(t->grad.squaredNorm());
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw DivergenceError("gradient norm is not finite");
  const Scalar clip = norm > cfg.clip_norm ? static_cast<Scalar>(cfg.clip_norm / norm) : Scalar(1);
  state.t += 1;
  const Scalar b1 = static_cast<Scalar>(cfg.beta1), b2 = static_cast<Scalar>(cfg.beta2);
  const Scalar c1 = static_cast<Scalar>(1.0 - std::pow(cfg.beta1, static_cast<double>(state.t)));
  const Scalar c2 = static_cast<Scalar>(1.0 - std::pow(cfg.beta2, static_cast<double>(state.t)));
  const Scalar lr = static_cast<Scalar>(cfg.learning_rate);
  const Scalar eps = static_cast<Scalar>(cfg.adam_eps);
  for (size_t i = 0; i < named.size(); ++i) {
    Tensor<Scalar>& t = *named[i].second;
    auto& m = state.m[i];
    auto& v = state.v[i];
    const MatrixX<Scalar> g = t.grad * clip;
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    t.value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
  return norm;
}

template <typename Scalar>
std::vector<TrainExample<Scalar>> prepare_examples(const std::vector<StreamSample>& samples, const WorldConfig& world,
                                                   const Vocabulary& vocab, const ModelConfig& model,
                                                   const TrainConfig& cfg) {
  if (world.feature_dim != model.frame_feature_dim) {
    throw ConfigError("world feature_dim " + std::to_string(world.feature_dim) + " differs from model frame_feature_dim " +
                      std::to_string(model.frame_feature_dim));
  }
  std::vector<TrainExample<Scalar>> out;
  out.reserve(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    TrainExample<Scalar> ex;
    try {
      ex.seq = assemble(samples[i], vocab, model.tokens_per_frame, cfg.scheme,
                        cfg.chunk_tokens > 0 ? 0 : model.max_context);
      if (ex.seq.length() > model.max_context) {
        throw ContextOverflowError(std::string(scheme_name(cfg.scheme)) + " assembly of " +
                                   std::to_string(ex.seq.length()) + " positions exceeds max_context " +
                                   std::to_string(model.max_context));
      }
    } catch (const ContextOverflowError& e) {
      throw ContextOverflowError("sample " + std::to_string(i) + ": " + e.what());
    }
    ex.targets = loss_targets(ex.seq, compute_masks(ex.seq), vocab, cfg.stream_loss_weight);
    ex.features = render_features(world, samples[i].states, samples[i].feature_seed).cast<Scalar>();
    out.push_back(std::move(ex));
  }
  return out;
}

template <typename Scalar>
std::pair<double, double> accumulate_example(ModelParams<Scalar>& params, const TrainExample<Scalar>& ex,
                                             const TrainConfig& cfg, Scalar grad_scale) {
  double lm = 0, eos = 0;
  if (ex.targets.normalizer == 0) return {0.0, 0.0};
  for (auto [first, last] : chunk_items(ex.seq, cfg.chunk_tokens)) {
    const Index p0 = ex.seq.item_start[first];
    const Index p1 = last < ex.seq.items.size() ? ex.seq.item_start[last] : ex.seq.length();
    bool any = false;
    for (Index j = p0; j < p1 && !any; ++j) any = ex.targets.targets[static_cast<size_t>(j)] >= 0;
    if (!any) continue;

    Graph<Scalar> g;
    auto leaves = bind_parameters(g, params);
    NodeId loss = build_chunk_loss(g, leaves, params.config, ex.seq, ex.targets, ex.features, first, last);
    NodeId scaled = g.scale(loss, grad_scale);
    try {
      g.forward();
    } catch (const NonFiniteError& e) {
      throw DivergenceError(std::string("non-finite activation: ") + e.what());
    }
    const MatrixX<Scalar>& probs = g.probabilities(loss);
    for (Index j = p0; j < p1; ++j) {
      const int t = ex.targets.targets[static_cast<size_t>(j)];
      if (t < 0) continue;
      const double nll = -std::log(std::max(static_cast<double>(probs(j - p0, t)), 1e-300));
      (ex.targets.is_eos[static_cast<size_t>(j)] ? eos : lm) += nll;
    }
    g.backward(scaled);
  }
  return {lm / ex.targets.normalizer, eos / ex.targets.normalizer};
}

template <typename Scalar>
TrainResult train(ModelParams<Scalar>& params, const std::vector<StreamSample>& samples, const WorldConfig& world,
                  const Vocabulary& vocab, const TrainConfig& cfg, std::ostream* log, const StepCallback& on_step) {
  cfg.validate();
  params.config.validate();
  if (samples.empty()) throw ConfigError("train: empty dataset");
  if (vocab.size() != params.config.vocab_size) throw ConfigError("vocabulary size differs from the model's");
  const auto examples = prepare_examples<Scalar>(samples, world, vocab, params.config, cfg);

  TrainResult result;
  for (const auto& ex : examples) result.tokens_per_epoch += ex.seq.length();
  if (log != nullptr) *log << kTrainLogHeader << '\n' << std::setprecision(9);

  AdamState<Scalar> adam;
  int step = 0;
  std::vector<size_t> order(examples.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0;
    for (size_t b0 = 0; b0 < order.size(); b0 += static_cast<size_t>(cfg.batch_size)) {
      const size_t b1 = std::min(order.size(), b0 + static_cast<size_t>(cfg.batch_size));
      const Scalar scale = Scalar(1) / static_cast<Scalar>(b1 - b0);
      params.zero_grad();
      StepRecord rec;
      rec.step = ++step;
      rec.epoch = epoch;
      rec.lr = cfg.learning_rate;
      for (size_t k = b0; k < b1; ++k) {
        const auto& ex = examples[order[k]];
        std::pair<double, double> parts;
        try {
          parts = accumulate_example(params, ex, cfg, scale);
        } catch (const DivergenceError& e) {
          throw DivergenceError("step " + std::to_string(step) + ", sample " + std::to_string(order[k]) + ": " +
                                e.what());
        }
        rec.lm_loss += parts.first / static_cast<double>(b1 - b0);
        rec.eos_loss += parts.second / static_cast<double>(b1 - b0);
        rec.tokens += ex.seq.length();
        epoch_total += parts.first + cfg.stream_loss_weight * parts.second;
      }
      rec.total = rec.lm_loss + cfg.stream_loss_weight * rec.eos_loss;
      if (!std::isfinite(rec.total)) {
        throw DivergenceError("step " + std::to_string(step) + ": loss is " + std::to_string(rec.total) +
                              " (lm " + std::to_string(rec.lm_loss) + ", eos " + std::to_string(rec.eos_loss) + ")");
      }
      try {
        adam_step(params, adam, cfg);
      } catch (const DivergenceError& e) {
        throw DivergenceError("step " + std::to_string(step) + ": " + e.what());
      }
      result.steps.push_back(rec);
      if (log != nullptr) {
        *log << rec.step << ',' << rec.lm_loss << ',' << rec.eos_loss << ',' << rec.total << ',' << rec.lr << ','
             << rec.tokens << '\n';
      }
      if (on_step) on_step(rec);
    }
    result.epoch_mean_loss.push_back(epoch_total / static_cast<double>(examples.size()));
  }
  return result;
}

template double adam_step(ModelParams<float>&, AdamState<float>&, const TrainConfig&);
template double adam_step(ModelParams<double>&, AdamState<double>&, const TrainConfig&);
template std::vector<TrainExample<float>> prepare_examples(const std::vector<StreamSample>&, const WorldConfig&,
                                                           const Vocabulary&, const ModelConfig&, const TrainConfig&);
template std::vector<TrainExample<double>> prepare_examples(const std::vector<StreamSample>&, const WorldConfig&,
                                                            const Vocabulary&, const ModelConfig&, const TrainConfig&);
template std::pair<double, double> accumulate_example(ModelParams<float>&, const TrainExample<float>&,
                                                      const TrainConfig&, float);
template std::pair<double, double> accumulate_example(ModelParams<double>&, const TrainExample<double>&,
                                                      const TrainConfig&, double);
template TrainResult train(ModelParams<float>&, const std::vector<StreamSample>&, const WorldConfig&,
                           const Vocabulary&, const TrainConfig&, std::ostream*, const StepCallback&);
template TrainResult train(ModelParams<double>&, const std::vector<StreamSample>&, const WorldConfig&,
                           const Vocabulary&, const TrainConfig&, std::ostream*, const StepCallback&);

}  // namespace live
