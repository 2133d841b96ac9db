#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "live/data.hpp"
#include "live/engine.hpp"
#include "live/model.hpp"
#include "live/train.hpp"

namespace live {

enum class Precision : uint8_t { F32, F64 };
const char* precision_name(Precision precision);
Precision parse_precision(const std::string& name);  // throws ConfigError

struct DatasetConfig {
  int num_samples = 200;
  double val_fraction = 0.1;  // the last round(n * val_fraction) samples
  Source source = Source::Narration;
  int max_queries = 3;  // dialogue samples only

  void validate() const;  // throws ConfigError
};

/// Train and val splits; sample i is drawn from derive_seed(seed, i).
struct Dataset {
  std::vector<StreamSample> train, val;
};
Dataset generate_dataset(const WorldConfig& world, const DatasetConfig& data, uint64_t seed);

/// Everything a subcommand needs besides file paths. The global seed drives
/// data generation, model initialization and sample order.
struct RunConfig {
  uint64_t seed = 0;
  Precision precision = Precision::F32;
  WorldConfig world;
  DatasetConfig data;
  ModelConfig model = [] {
    ModelConfig m = ModelConfig::defaults();
    m.max_context = 12288;  // a default-length per_frame layout plus headroom
    return m;
  }();
  TrainConfig train = [] {
    TrainConfig t;
    t.chunk_tokens = 1024;
    return t;
  }();
  InferenceConfig inference;

  /// Checks each part plus their coupling (frame feature width, vocabulary
  /// size, train seed); throws ConfigError.
  void validate() const;
};

nlohmann::json to_json(const WorldConfig& cfg);
nlohmann::json to_json(const DatasetConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);  // without the seed, which is global
nlohmann::json to_json(const RunConfig& cfg);

/// Overlays `overrides` onto the defaults. Keys must already exist in the
/// defaults; unknown keys and type mismatches throw ConfigError naming the
/// key path. The result is validated.
RunConfig run_config_from_json(const nlohmann::json& overrides);
RunConfig load_run_config(const std::filesystem::path& path);  // throws ConfigError

WorldConfig world_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Applies "a.b.c=value"; value is parsed as JSON, falling back to a string.
void apply_override(nlohmann::json& j, const std::string& assignment);

/// One line per differing leaf: "path: old -> new".
std::vector<std::string> json_diff(const nlohmann::json& a, const nlohmann::json& b, const std::string& prefix = "");

}  // namespace live
