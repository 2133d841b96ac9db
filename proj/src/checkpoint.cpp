#include "live/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "live/error.hpp"

namespace live {

namespace {

void put_u8(std::vector<char>& out, uint8_t v) { out.push_back(static_cast<char>(v)); }

template <typename T>
void put_le(std::vector<char>& out, T v) {
  for (size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((static_cast<uint64_t>(v) >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::vector<char>& data, std::string path) : data_(data), path_(std::move(path)) {}

  template <typename T>
  T le() {
    need(sizeof(T));
    uint64_t v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(data_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string bytes(size_t n) {
    need(n);
    std::string s(data_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  size_t pos() const { return pos_; }
  size_t remaining() const { return data_.size() - pos_; }

  [[noreturn]] void corrupt(const std::string& what) const {
    throw FormatError("corrupt checkpoint " + path_ + ": " + what);
  }

 private:
  void need(size_t n) const {
    if (pos_ + n > data_.size()) corrupt("truncated at byte " + std::to_string(pos_));
  }

  const std::vector<char>& data_;
  std::string path_;
  size_t pos_ = 0;
};

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct TableEntry {
  std::string name;
  DType dtype;
  Index rows, cols;
  uint64_t offset;
};

struct Parsed {
  CheckpointInfo info;
  std::vector<TableEntry> table;
  size_t payload_start = 0;
  uint64_t payload_size = 0;
};

Parsed parse(const std::vector<char>& data, const std::filesystem::path& path, bool with_table) {
  Reader r(data, path.string());
  Parsed out;
  if (r.bytes(8) != std::string(kCheckpointMagic, 8)) r.corrupt("bad magic");
  out.info.version = r.le<uint32_t>();
  if (out.info.version != kCheckpointVersion) {
    throw VersionError("checkpoint " + path.string() + " has format version " + std::to_string(out.info.version) +
                       ", this build reads version " + std::to_string(kCheckpointVersion));
  }
  const auto header_len = r.le<uint32_t>();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.bytes(header_len));
    out.info.config = model_config_from_json(header.at("config"));
    out.info.dtype = header.at("dtype").get<std::string>() == "f64" ? DType::F64 : DType::F32;
    out.info.metadata = header.value("metadata", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    r.corrupt(std::string("header: ") + e.what());
  }
  if (!with_table) return out;

  const auto count = r.le<uint32_t>();
  for (uint32_t i = 0; i < count; ++i) {
    TableEntry e;
    e.name = r.bytes(r.le<uint16_t>());
    const auto dt = r.le<uint8_t>();
    if (dt > 1) r.corrupt("unknown dtype for " + e.name);
    e.dtype = static_cast<DType>(dt);
    const auto ndim = r.le<uint8_t>();
    if (ndim != 2) r.corrupt("tensor " + e.name + " has " + std::to_string(ndim) + " dims");
    e.rows = static_cast<Index>(r.le<uint64_t>());
    e.cols = static_cast<Index>(r.le<uint64_t>());
    e.offset = r.le<uint64_t>();
    out.table.push_back(std::move(e));
  }
  out.payload_size = r.le<uint64_t>();
  out.payload_start = r.pos();
  if (r.remaining() != out.payload_size) {
    r.corrupt("payload has " + std::to_string(r.remaining()) + " bytes, header declares " +
              std::to_string(out.payload_size));
  }
  return out;
}

}  // namespace

nlohmann::json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size},
          {"d_model", c.d_model},
          {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},
          {"max_context", c.max_context},
          {"tokens_per_frame", c.tokens_per_frame},
          {"frame_feature_dim", c.frame_feature_dim},
          {"mlp_hidden", c.mlp_hidden},
          {"shared_stream_eos", c.shared_stream_eos}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c = ModelConfig::defaults();
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.d_model = j.value("d_model", c.d_model);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.max_context = j.value("max_context", c.max_context);
  c.tokens_per_frame = j.value("tokens_per_frame", c.tokens_per_frame);
  c.frame_feature_dim = j.value("frame_feature_dim", c.frame_feature_dim);
  c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
  c.shared_stream_eos = j.value("shared_stream_eos", c.shared_stream_eos);
  return c;
}

template <typename Scalar>
void save_checkpoint(const ModelParams<Scalar>& params, const std::filesystem::path& path,
                     const nlohmann::json& metadata) {
  const nlohmann::json header = {{"config", to_json(params.config)},
                                 {"dtype", dtype_of<Scalar>() == DType::F64 ? "f64" : "f32"},
                                 {"metadata", metadata}};
  const std::string header_text = header.dump();

  std::vector<char> out(kCheckpointMagic, kCheckpointMagic + 8);
  put_le<uint32_t>(out, kCheckpointVersion);
  put_le<uint32_t>(out, static_cast<uint32_t>(header_text.size()));
  out.insert(out.end(), header_text.begin(), header_text.end());

  const auto named = params.named_tensors();
  put_le<uint32_t>(out, static_cast<uint32_t>(named.size()));
  uint64_t offset = 0;
  for (const auto& [name, t] : named) {
    put_le<uint16_t>(out, static_cast<uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u8(out, static_cast<uint8_t>(dtype_of<Scalar>()));
    put_u8(out, 2);
    put_le<uint64_t>(out, static_cast<uint64_t>(t->rows()));
    put_le<uint64_t>(out, static_cast<uint64_t>(t->cols()));
    put_le<uint64_t>(out, offset);
    offset += static_cast<uint64_t>(t->size()) * sizeof(Scalar);
  }
  put_le<uint64_t>(out, offset);
  for (const auto& [name, t] : named) {
    // Host is little-endian (checked at configure time); values are raw IEEE-754.
    const char* bytes = reinterpret_cast<const char*>(t->value.data());
    out.insert(out.end(), bytes, bytes + t->size() * static_cast<Index>(sizeof(Scalar)));
  }

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot write checkpoint " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw FormatError("short write to " + path.string());
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  return parse(read_file(path), path, /*with_table=*/false).info;
}

template <typename Scalar>
ModelParams<Scalar> load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info) {
  const std::vector<char> data = read_file(path);
  Parsed parsed = parse(data, path, /*with_table=*/true);
  const ModelConfig& cfg = parsed.info.config;
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw FormatError("checkpoint " + path.string() + " embeds an invalid config: " + e.what());
  }
  const auto shapes = tensor_shapes(cfg);
  if (parsed.table.size() != shapes.size()) {
    throw FormatError("checkpoint " + path.string() + " has " + std::to_string(parsed.table.size()) +
                      " tensors, config implies " + std::to_string(shapes.size()));
  }

  ModelParams<Scalar> params;
  params.config = cfg;
  params.layers.resize(static_cast<size_t>(cfg.n_layers));
  auto named = params.named_tensors();
  for (size_t i = 0; i < named.size(); ++i) {
    const TableEntry& e = parsed.table[i];
    const auto& [name, expected] = shapes[i];
    if (e.name != name || e.rows != expected.first || e.cols != expected.second) {
      throw FormatError("checkpoint " + path.string() + ": tensor '" + e.name + "' " +
                        shape_string(e.rows, e.cols) + " does not match config entry '" + name + "' " +
                        shape_string(expected.first, expected.second));
    }
    const size_t elem = e.dtype == DType::F64 ? 8 : 4;
    const uint64_t bytes = static_cast<uint64_t>(e.rows * e.cols) * elem;
    if (e.offset + bytes > parsed.payload_size) throw FormatError("checkpoint " + path.string() + ": tensor out of bounds");
    const char* src = data.data() + parsed.payload_start + e.offset;
    MatrixX<Scalar>& dst = named[i].second->value;
    dst.resize(e.rows, e.cols);
    if (e.dtype == dtype_of<Scalar>()) {
      std::memcpy(dst.data(), src, bytes);
    } else if (e.dtype == DType::F64) {
      MatrixX<double> tmp(e.rows, e.cols);
      std::memcpy(tmp.data(), src, bytes);
      dst = tmp.cast<Scalar>();
    } else {
      MatrixX<float> tmp(e.rows, e.cols);
      std::memcpy(tmp.data(), src, bytes);
      dst = tmp.cast<Scalar>();
    }
    if (!dst.allFinite()) throw FormatError("checkpoint " + path.string() + ": non-finite values in " + name);
  }
  if (info) *info = parsed.info;
  return params;
}

template void save_checkpoint<float>(const ModelParams<float>&, const std::filesystem::path&, const nlohmann::json&);
template void save_checkpoint<double>(const ModelParams<double>&, const std::filesystem::path&, const nlohmann::json&);
template ModelParams<float> load_checkpoint<float>(const std::filesystem::path&, CheckpointInfo*);
template ModelParams<double> load_checkpoint<double>(const std::filesystem::path&, CheckpointInfo*);

}  // namespace live
