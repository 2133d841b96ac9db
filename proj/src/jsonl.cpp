#include <fstream>

#include "json.hpp"
#include "live/data.hpp"
#include "live/error.hpp"

namespace live {

using nlohmann::json;

std::string to_jsonl_line(const StreamSample& sample) {
  json events = json::array();
  for (const Turn& t : sample.turns) events.push_back({{"kind", role_name(t.role)}, {"frame", t.frame}, {"text", t.text}});
  json j = {{"version", kJsonlVersion},
            {"fps", sample.fps},
            {"num_frames", sample.num_frames},
            {"source", source_name(sample.source)},
            {"feature_seed", sample.feature_seed},
            {"states", sample.states},
            {"events", std::move(events)}};
  return j.dump();
}

namespace {

const json& field(const json& j, const char* name) {
  auto it = j.find(name);
  if (it == j.end()) throw FormatError(std::string("missing \"") + name + "\" field");
  return *it;
}

}  // namespace

StreamSample from_jsonl_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("expected a JSON object");
  try {
    const int version = field(j, "version").get<int>();
    if (version != kJsonlVersion) {
      throw VersionError("schema version " + std::to_string(version) + ", expected " + std::to_string(kJsonlVersion));
    }
    StreamSample s;
    s.fps = field(j, "fps").get<double>();
    s.num_frames = field(j, "num_frames").get<int>();
    const std::string source = field(j, "source").get<std::string>();
    if (source == "narration") {
      s.source = Source::Narration;
    } else if (source == "dialogue") {
      s.source = Source::Dialogue;
    } else {
      throw FormatError("unknown source \"" + source + "\"");
    }
    s.feature_seed = j.value("feature_seed", uint64_t{0});
    s.states = field(j, "states").get<std::vector<int>>();
    if (static_cast<int>(s.states.size()) != s.num_frames) throw FormatError("states length differs from num_frames");
    int last = 0;
    for (const json& e : field(j, "events")) {
      const std::string kind = field(e, "kind").get<std::string>();
      Turn t;
      if (kind == "user") {
        t.role = Role::User;
      } else if (kind == "assistant") {
        t.role = Role::Assistant;
      } else {
        throw FormatError("unknown event kind \"" + kind + "\"");
      }
      t.frame = field(e, "frame").get<int>();
      t.text = field(e, "text").get<std::string>();
      if (t.frame < last || t.frame >= s.num_frames) throw FormatError("event frame out of order or range");
      last = t.frame;
      s.turns.push_back(std::move(t));
    }
    return s;
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad field type: ") + e.what());
  }
}

void write_jsonl(const std::vector<StreamSample>& samples, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  for (const StreamSample& s : samples) out << to_jsonl_line(s) << '\n';
  if (!out) throw FormatError("write failed for " + path.string());
}

std::vector<StreamSample> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  std::vector<StreamSample> samples;
  std::string line;
  for (int number = 1; std::getline(in, line); ++number) {
    if (line.empty()) continue;
    try {
      samples.push_back(from_jsonl_line(line));
    } catch (const VersionError& e) {
      throw VersionError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return samples;
}

}  // namespace live
