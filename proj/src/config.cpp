#include "live/config.hpp"

#include <cmath>
#include <fstream>

#include "live/checkpoint.hpp"
#include "live/error.hpp"

namespace live {

const char* precision_name(Precision precision) { return precision == Precision::F32 ? "f32" : "f64"; }

Precision parse_precision(const std::string& name) {
  if (name == "f32") return Precision::F32;
  if (name == "f64") return Precision::F64;
  throw ConfigError("precision must be f32 or f64, got \"" + name + "\"");
}

namespace {

Source parse_source(const std::string& name) {
  if (name == "narration") return Source::Narration;
  if (name == "dialogue") return Source::Dialogue;
  throw ConfigError("data.source must be narration or dialogue, got \"" + name + "\"");
}

bool same_kind(const nlohmann::json& base, const nlohmann::json& v) {
  if (base.is_number_float()) return v.is_number();
  if (base.is_number_integer()) return v.is_number_integer();
  return base.type() == v.type();
}

void overlay(nlohmann::json& base, const nlohmann::json& over, const std::string& path) {
  if (!over.is_object()) throw ConfigError((path.empty() ? "config" : path) + " must be an object");
  for (auto it = over.begin(); it != over.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key " + key);
    nlohmann::json& slot = base[it.key()];
    if (slot.is_object()) {
      overlay(slot, it.value(), key);
    } else if (!same_kind(slot, it.value())) {
      throw ConfigError("config key " + key + " expects " + std::string(slot.type_name()) + ", got " +
                        it.value().dump());
    } else {
      slot = it.value();
    }
  }
}

}  // namespace

void DatasetConfig::validate() const {
  if (num_samples < 1) throw ConfigError("data.num_samples must be at least 1");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("data.val_fraction must be in [0, 1)");
  if (max_queries < 1) throw ConfigError("data.max_queries must be at least 1");
}

Dataset generate_dataset(const WorldConfig& world, const DatasetConfig& data, uint64_t seed) {
  world.validate();
  data.validate();
  const int n_val = static_cast<int>(std::lround(data.num_samples * data.val_fraction));
  Dataset out;
  for (int i = 0; i < data.num_samples; ++i) {
    const uint64_t s = derive_seed(seed, static_cast<uint64_t>(i));
    const AnnotatedVideo video = gen_world(world, s);
    StreamSample sample = data.source == Source::Narration
                              ? make_narration_stream(video)
                              : insert_queries(video, synthesize_dialogue(video, default_templates(), s),
                                               data.max_queries, s);
    (i < data.num_samples - n_val ? out.train : out.val).push_back(std::move(sample));
  }
  return out;
}

void RunConfig::validate() const {
  world.validate();
  data.validate();
  model.validate();
  train.validate();
  inference.validate();
  if (model.frame_feature_dim != world.feature_dim) {
    throw ConfigError("model.frame_feature_dim " + std::to_string(model.frame_feature_dim) +
                      " differs from world.feature_dim " + std::to_string(world.feature_dim));
  }
  const int v = Vocabulary::standard(model.shared_stream_eos).size();
  if (model.vocab_size != v) {
    throw ConfigError("model.vocab_size must be " + std::to_string(v) + ", got " + std::to_string(model.vocab_size));
  }
  if (train.seed != seed) throw ConfigError("train seed must equal the global seed");
}

nlohmann::json to_json(const WorldConfig& c) {
  return {{"num_activities", c.num_activities}, {"min_duration", c.min_duration},
          {"max_duration", c.max_duration},     {"gap_probability", c.gap_probability},
          {"max_gap", c.max_gap},               {"noise_sigma", c.noise_sigma},
          {"num_frames", c.num_frames},         {"fps", c.fps},
          {"feature_dim", c.feature_dim},       {"steps_per_task", c.steps_per_task},
          {"state_seed", c.state_seed}};
}

nlohmann::json to_json(const DatasetConfig& c) {
  return {{"num_samples", c.num_samples},
          {"val_fraction", c.val_fraction},
          {"source", source_name(c.source)},
          {"max_queries", c.max_queries}};
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"scheme", scheme_name(c.scheme)},
          {"stream_loss_weight", c.stream_loss_weight},
          {"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"chunk_tokens", c.chunk_tokens},
          {"clip_norm", c.clip_norm},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps}};
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"precision", precision_name(c.precision)},
          {"world", to_json(c.world)},
          {"data", to_json(c.data)},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"inference", to_json(c.inference)}};
}

WorldConfig world_config_from_json(const nlohmann::json& j) {
  WorldConfig c;
  c.num_activities = j.value("num_activities", c.num_activities);
  c.min_duration = j.value("min_duration", c.min_duration);
  c.max_duration = j.value("max_duration", c.max_duration);
  c.gap_probability = j.value("gap_probability", c.gap_probability);
  c.max_gap = j.value("max_gap", c.max_gap);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.num_frames = j.value("num_frames", c.num_frames);
  c.fps = j.value("fps", c.fps);
  c.feature_dim = j.value("feature_dim", c.feature_dim);
  c.steps_per_task = j.value("steps_per_task", c.steps_per_task);
  c.state_seed = j.value("state_seed", c.state_seed);
  return c;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (j.contains("scheme")) c.scheme = parse_scheme(j.at("scheme").get<std::string>());
  c.stream_loss_weight = j.value("stream_loss_weight", c.stream_loss_weight);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.chunk_tokens = j.value("chunk_tokens", c.chunk_tokens);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  return c;
}

RunConfig run_config_from_json(const nlohmann::json& overrides) {
  nlohmann::json j = to_json(RunConfig{});
  overlay(j, overrides, "");
  RunConfig c;
  try {
    c.seed = j.at("seed").get<uint64_t>();
    c.precision = parse_precision(j.at("precision").get<std::string>());
    c.world = world_config_from_json(j.at("world"));
    const auto& d = j.at("data");
    c.data.num_samples = d.at("num_samples").get<int>();
    c.data.val_fraction = d.at("val_fraction").get<double>();
    c.data.source = parse_source(d.at("source").get<std::string>());
    c.data.max_queries = d.at("max_queries").get<int>();
    c.model = model_config_from_json(j.at("model"));
    c.train = train_config_from_json(j.at("train"));
    c.train.seed = c.seed;
    c.inference = inference_config_from_json(j.at("inference"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

void apply_override(nlohmann::json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  nlohmann::json* node = &j;
  size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("empty key in override " + assignment);
    if (!node->is_object()) *node = nlohmann::json::object();
    if (dot == std::string::npos) {
      (*node)[key] = std::move(value);
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

std::vector<std::string> json_diff(const nlohmann::json& a, const nlohmann::json& b, const std::string& prefix) {
  std::vector<std::string> out;
  if (a.is_object() && b.is_object()) {
    for (auto it = a.begin(); it != a.end(); ++it) {
      const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
      if (!b.contains(it.key())) {
        out.push_back(key + ": " + it.value().dump() + " -> (missing)");
      } else {
        auto sub = json_diff(it.value(), b.at(it.key()), key);
        out.insert(out.end(), sub.begin(), sub.end());
      }
    }
    for (auto it = b.begin(); it != b.end(); ++it) {
      if (!a.contains(it.key())) {
        out.push_back((prefix.empty() ? it.key() : prefix + "." + it.key()) + ": (missing) -> " + it.value().dump());
      }
    }
  } else if (a != b) {
    out.push_back((prefix.empty() ? "(root)" : prefix) + ": " + a.dump() + " -> " + b.dump());
  }
  return out;
}

}  // namespace live
