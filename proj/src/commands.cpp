#include "live/commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "live/checkpoint.hpp"
#include "live/config.hpp"
#include "live/error.hpp"
#include "live/metrics.hpp"

namespace live {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct Global {
  std::optional<uint64_t> seed;
  std::optional<std::string> precision;
  std::string config;
  std::vector<std::string> sets;
  std::string out;
};

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + " is not valid JSON: " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty() || !fs::is_regular_file(path)) throw ConfigError(what + " not found: " + path);
}

// base <- config file <- flag values <- --set <- global seed and precision
RunConfig resolve(json base, const Global& g, const json& flags) {
  if (!g.config.empty()) base.merge_patch(read_json_file(g.config));
  base.merge_patch(flags);
  for (const auto& s : g.sets) apply_override(base, s);
  if (g.seed) base["seed"] = *g.seed;
  if (g.precision) base["precision"] = *g.precision;
  return run_config_from_json(base);
}

// The run config a checkpoint was trained with.
json checkpoint_config(const std::string& path) {
  require_file(path, "checkpoint");
  const CheckpointInfo info = read_checkpoint_info(path);
  json base = info.metadata.value("config", json::object());
  base["model"] = to_json(info.config);
  return base;
}

fs::path make_run_dir(const std::string& out, const std::string& command) {
  if (!out.empty()) {
    const fs::path dir(out);
    if (fs::exists(dir) && !fs::is_empty(dir)) throw ConfigError("refusing to overwrite non-empty " + out);
    fs::create_directories(dir);
    return dir;
  }
  const char* env = std::getenv(kOutputRootEnv);
  const fs::path root = env != nullptr && *env != '\0' ? fs::path(env) : fs::path("runs");
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  fs::create_directories(root);
  fs::path dir = root / (command + "-" + stamp);
  for (int k = 2; fs::exists(dir); ++k) dir = root / (command + "-" + stamp + "-" + std::to_string(k));
  fs::create_directory(dir);
  return dir;
}

void write_snapshot(const fs::path& dir, const std::string& command, const RunConfig& cfg, const json& inputs) {
  const json j = {{"command", command}, {"config", to_json(cfg)}, {"inputs", inputs}};
  write_text(dir / "config.json", j.dump(2) + "\n");
}

template <typename F>
auto with_precision(Precision p, F&& f) {
  return p == Precision::F32 ? f(float{}) : f(double{});
}

std::vector<double> parse_sweep(const std::string& spec) {
  std::vector<double> v;
  std::stringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, ':')) {
    try {
      size_t used = 0;
      v.push_back(std::stod(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::logic_error&) {
      throw ConfigError("theta sweep must look like start:stop:step, got " + spec);
    }
  }
  if (v.size() != 3 || !(v[2] > 0) || v[1] < v[0]) throw ConfigError("theta sweep must look like start:stop:step, got " + spec);
  std::vector<double> out;
  const int n = static_cast<int>(std::floor((v[1] - v[0]) / v[2] + 1e-9)) + 1;
  for (int i = 0; i < n; ++i) out.push_back(std::round((v[0] + i * v[2]) * 1e9) / 1e9);
  return out;
}

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

// gen-data ------------------------------------------------------------------

int gen_data(const Global& g, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = resolve(json::object(), g, json::object());
  const Dataset ds = generate_dataset(cfg.world, cfg.data, cfg.seed);
  const fs::path dir = make_run_dir(g.out, "gen-data");
  write_snapshot(dir, "gen-data", cfg, json::object());
  write_jsonl(ds.train, dir / "train.jsonl");
  write_jsonl(ds.val, dir / "val.jsonl");
  int turns = 0;
  for (const auto& s : ds.train) turns += s.assistant_turns();
  for (const auto& s : ds.val) turns += s.assistant_turns();
  const json manifest = {{"seed", cfg.seed},
                         {"source", source_name(cfg.data.source)},
                         {"train", {{"path", "train.jsonl"}, {"samples", ds.train.size()}}},
                         {"val", {{"path", "val.jsonl"}, {"samples", ds.val.size()}}},
                         {"assistant_turns", turns}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  if (cfg.data.val_fraction == 0.0) err << "warning: val_fraction is 0, val.jsonl is empty\n";
  out << "train " << ds.train.size() << " samples, val " << ds.val.size() << " samples -> " << dir.string() << "\n";
  return kExitOk;
}

// train ---------------------------------------------------------------------

struct TrainArgs {
  std::string data, resume, scheme;
  std::optional<int> epochs;
  std::optional<double> lr;
};

int train_cmd(const Global& g, const TrainArgs& a, std::ostream& out) {
  json flags = json::object();
  if (!a.scheme.empty()) flags["train"]["scheme"] = a.scheme;
  if (a.epochs) flags["train"]["epochs"] = *a.epochs;
  if (a.lr) flags["train"]["learning_rate"] = *a.lr;
  const RunConfig cfg = resolve(json::object(), g, flags);
  require_file(a.data, "training data");
  const json inputs = {{"data", a.data}};

  fs::path resume_ckpt;
  if (!a.resume.empty()) {
    const fs::path prev_dir(a.resume);
    const json prev = read_json_file(prev_dir / "config.json");
    json now = {{"config", to_json(cfg)}, {"inputs", inputs}};
    json then = {{"config", prev.value("config", json::object())}, {"inputs", prev.value("inputs", json::object())}};
    const auto diff = json_diff(then, now);
    if (!diff.empty()) {
      std::string msg = "refusing to resume from " + prev_dir.string() + ", config differs:";
      for (const auto& d : diff) msg += "\n  " + d;
      throw ConfigError(msg);
    }
    resume_ckpt = prev_dir / "checkpoint.bin";
    require_file(resume_ckpt.string(), "checkpoint to resume");
  }

  const std::vector<StreamSample> samples = read_jsonl(a.data);
  const Vocabulary vocab = Vocabulary::standard(cfg.model.shared_stream_eos);
  const fs::path dir = make_run_dir(g.out, "train");
  json snapshot_inputs = inputs;
  if (!a.resume.empty()) snapshot_inputs["resume"] = a.resume;
  write_snapshot(dir, "train", cfg, snapshot_inputs);

  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult res = with_precision(cfg.precision, [&](auto tag) {
    using S = decltype(tag);
    ModelParams<S> params = resume_ckpt.empty() ? init_model<S>(cfg.model, cfg.seed) : load_checkpoint<S>(resume_ckpt);
    std::ofstream log(dir / "train_log.csv", std::ios::binary);
    const int total = static_cast<int>((samples.size() + static_cast<size_t>(cfg.train.batch_size) - 1) /
                                       static_cast<size_t>(cfg.train.batch_size)) * cfg.train.epochs;
    const int every = std::max(1, total / 20);
    TrainResult r = train(params, samples, cfg.world, vocab, cfg.train, &log, [&](const StepRecord& s) {
      if (s.step % every == 0 || s.step == total) {
        out << "epoch " << s.epoch + 1 << " step " << s.step << "/" << total << " loss " << fixed(s.total, 4)
            << std::endl;
      }
    });
    json meta = {{"config", to_json(cfg)},
                 {"train_tokens", r.tokens_per_epoch},
                 {"epoch_mean_loss", r.epoch_mean_loss}};
    save_checkpoint(params, dir / "checkpoint.bin", meta);
    return r;
  });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const json summary = {{"scheme", scheme_name(cfg.train.scheme)},
                        {"samples", samples.size()},
                        {"train_tokens", res.tokens_per_epoch},
                        {"steps", res.steps.size()},
                        {"epoch_mean_loss", res.epoch_mean_loss}};
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  out << scheme_name(cfg.train.scheme) << ": " << res.steps.size() << " steps, " << res.tokens_per_epoch
      << " tokens per epoch, final epoch loss " << fixed(res.epoch_mean_loss.back(), 4) << " (" << fixed(secs, 1)
      << " s) -> " << dir.string() << "\n";
  return kExitOk;
}

// eval ----------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, data, sweep;
  std::optional<double> theta;
  int workers = 0;
};

int eval_cmd(const Global& g, const EvalArgs& a, std::ostream& out) {
  json flags = json::object();
  if (a.theta) flags["inference"]["theta"] = *a.theta;
  const RunConfig cfg = resolve(checkpoint_config(a.checkpoint), g, flags);
  require_file(a.data, "evaluation data");
  const std::vector<double> thetas = a.sweep.empty() ? std::vector<double>{cfg.inference.theta} : parse_sweep(a.sweep);
  const std::vector<StreamSample> samples = read_jsonl(a.data);
  const Vocabulary vocab = Vocabulary::standard(cfg.model.shared_stream_eos);
  const fs::path dir = make_run_dir(g.out, "eval");
  json inputs = {{"checkpoint", a.checkpoint}, {"data", a.data}};
  if (!a.sweep.empty()) inputs["theta_sweep"] = a.sweep;
  write_snapshot(dir, "eval", cfg, inputs);

  const std::vector<MetricsReport> reports = with_precision(cfg.precision, [&](auto tag) {
    using S = decltype(tag);
    const ModelParams<S> params = load_checkpoint<S>(a.checkpoint);
    std::vector<MetricsReport> r;
    for (double th : thetas) r.push_back(evaluate_dataset(params, samples, cfg.world, vocab, cfg.train.scheme, th, a.workers));
    return r;
  });

  json results = json::array();
  std::ostringstream csv;
  csv << "theta,lm_ppl,lg_match,time_diff,fluency,n_samples,n_turns\n";
  for (const auto& r : reports) {
    results.push_back(to_json(r));
    csv << fixed(r.theta, 4) << ',' << fixed(r.lm_ppl, 6) << ',' << fixed(r.lg_match, 6) << ','
        << fixed(r.time_diff, 6) << ',' << fixed(r.fluency, 6) << ',' << r.n_samples << ',' << r.n_turns << '\n';
    out << "theta " << fixed(r.theta, 2) << "  LM-PPL " << fixed(r.lm_ppl, 3) << "  TimeDiff " << fixed(r.time_diff, 3)
        << "  Fluency " << fixed(100 * r.fluency, 1) << "%  LG-Match " << fixed(100 * r.lg_match, 1) << "%\n";
  }
  const json metrics = {{"scheme", scheme_name(cfg.train.scheme)}, {"results", results}};
  write_text(dir / "metrics.json", metrics.dump(2) + "\n");
  write_text(dir / "metrics.csv", csv.str());
  out << "-> " << dir.string() << "\n";
  return kExitOk;
}

// stream --------------------------------------------------------------------

struct StreamArgs {
  std::string checkpoint, sample, mode = "simulated", skip_policy;
  int index = 0;
  std::optional<double> theta, fps, decode_ms, encode_ms;
  std::optional<int> queue;
};

int stream_cmd(const Global& g, const StreamArgs& a, std::ostream& out) {
  json flags = json::object();
  if (a.theta) flags["inference"]["theta"] = *a.theta;
  if (a.fps) flags["inference"]["fps"] = *a.fps;
  if (a.decode_ms) flags["inference"]["decode_ms_per_token"] = *a.decode_ms;
  if (a.encode_ms) flags["inference"]["encode_ms_per_frame"] = *a.encode_ms;
  if (a.queue) flags["inference"]["queue_capacity"] = *a.queue;
  if (!a.skip_policy.empty()) flags["inference"]["skip_policy"] = a.skip_policy;
  const RunConfig cfg = resolve(checkpoint_config(a.checkpoint), g, flags);
  const ClockMode mode = parse_clock_mode(a.mode);
  require_file(a.sample, "sample file");
  const std::vector<StreamSample> samples = read_jsonl(a.sample);
  if (a.index < 0 || a.index >= static_cast<int>(samples.size())) {
    throw ConfigError("sample index " + std::to_string(a.index) + " outside 0.." + std::to_string(samples.size() - 1));
  }
  const StreamSample& sample = samples[static_cast<size_t>(a.index)];
  const Vocabulary vocab = Vocabulary::standard(cfg.model.shared_stream_eos);
  const fs::path dir = make_run_dir(g.out, "stream");
  write_snapshot(dir, "stream", cfg,
                 {{"checkpoint", a.checkpoint}, {"sample", a.sample}, {"index", a.index}, {"mode", a.mode}});

  const StreamTranscript t = with_precision(cfg.precision, [&](auto tag) {
    using S = decltype(tag);
    const ModelParams<S> params = load_checkpoint<S>(a.checkpoint);
    return stream_sample(params, sample, cfg.world, vocab, cfg.train.scheme, cfg.inference, mode);
  });
  write_transcript_jsonl(t, dir / "transcript.jsonl");
  const json summary = {{"scheme", scheme_name(cfg.train.scheme)}, {"mode", clock_mode_name(mode)}, {"stats", to_json(t.stats)}};
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  for (const auto& r : t.frames) {
    if (r.decision == FrameOutcome::Spoke) out << "[" << fixed(r.arrival, 1) << "s] " << r.response_text << "\n";
  }
  out << t.stats.frames_processed << "/" << t.stats.frames << " frames, " << t.stats.frames_skipped << " skipped, "
      << t.stats.responses << " responses, " << fixed(t.stats.processed_fps, 2) << " fps, peak cache "
      << t.stats.peak_cache_tokens << " -> " << dir.string() << "\n";
  return kExitOk;
}

// bench ---------------------------------------------------------------------

struct BenchArgs {
  std::vector<std::string> checkpoints;
  std::string data, throughput_sample, latency_sweep = "0,10,20,30,45,60";
  int throughput_index = 0;
  bool untrained = true;
  bool check_concurrent = false;
};

struct Check {
  std::string name;
  bool pass = false;
  std::string detail;
};

const AblationRow* row_for(const std::vector<AblationRow>& rows, Scheme scheme) {
  for (const auto& r : rows)
    if (r.name != "untrained" && r.scheme == scheme) return &r;
  return nullptr;
}

std::vector<Check> ordering_checks(const std::vector<AblationRow>& rows) {
  const AblationRow* s = row_for(rows, Scheme::Streaming);
  const AblationRow* i = row_for(rows, Scheme::Interleaved);
  const AblationRow* p = row_for(rows, Scheme::PerFrame);
  const AblationRow* u = nullptr;
  for (const auto& r : rows)
    if (r.name == "untrained") u = &r;
  auto num = [](double v) { return fixed(v, 4); };
  std::vector<Check> c;
  if (s && i) {
    c.push_back({"train tokens streaming == interleaved", s->train_tokens == i->train_tokens,
                 std::to_string(s->train_tokens) + " vs " + std::to_string(i->train_tokens)});
  }
  if (s && p) {
    const double ratio = static_cast<double>(p->train_tokens) / static_cast<double>(std::max<int64_t>(1, s->train_tokens));
    c.push_back({"train tokens per_frame / streaming >= 1.5", ratio >= 1.5, num(ratio)});
    c.push_back({"TimeDiff streaming <= per_frame", s->metrics.time_diff <= p->metrics.time_diff,
                 num(s->metrics.time_diff) + " vs " + num(p->metrics.time_diff)});
    c.push_back({"Fluency streaming >= per_frame", s->metrics.fluency >= p->metrics.fluency,
                 num(s->metrics.fluency) + " vs " + num(p->metrics.fluency)});
    c.push_back({"skips streaming == 0", s->metrics.throughput.skips == 0, std::to_string(s->metrics.throughput.skips)});
    c.push_back({"skips per_frame > 0", p->metrics.throughput.skips > 0, std::to_string(p->metrics.throughput.skips)});
  }
  if (p && i) {
    c.push_back({"TimeDiff per_frame < interleaved", p->metrics.time_diff < i->metrics.time_diff,
                 num(p->metrics.time_diff) + " vs " + num(i->metrics.time_diff)});
  }
  if (s && p && i) {
    const auto a = s->metrics.throughput.peak_cache_tokens, b = p->metrics.throughput.peak_cache_tokens,
               d = i->metrics.throughput.peak_cache_tokens;
    c.push_back({"peak cache streaming < per_frame < interleaved", a < b && b < d,
                 std::to_string(a) + " / " + std::to_string(b) + " / " + std::to_string(d)});
  }
  if (s && u) {
    c.push_back({"LM-PPL untrained > 5 x streaming", u->metrics.lm_ppl > 5 * s->metrics.lm_ppl,
                 num(u->metrics.lm_ppl) + " vs " + num(s->metrics.lm_ppl)});
  }
  return c;
}

// Replays the first frames with zero latency on a fast clock in both modes.
template <typename S>
Check concurrent_check(const std::string& name, const ModelParams<S>& params, const StreamSample& sample,
                       const WorldConfig& world, const Vocabulary& vocab, Scheme scheme, InferenceConfig cfg) {
  cfg.fps = 200;
  cfg.encode_ms_per_frame = 0;
  cfg.decode_ms_per_token = 0;
  cfg.skip_policy = SkipPolicy::Block;
  const int n = std::min(sample.num_frames, 120);
  std::vector<ScheduledQuery> queries;
  for (const auto& q : scheduled_queries(sample)) {
    const int frame = static_cast<int>(std::lround(q.at_time * sample.fps));
    if (frame < n) queries.push_back({frame / cfg.fps, q.text});
  }
  const MatrixX<S> feats = render_features(world, sample.states, sample.feature_seed).template cast<S>();
  ModelStream<S> a(params, feats), b(params, feats);
  const auto sim = run_stream(a, vocab, scheme, n, queries, cfg, ClockMode::Simulated);
  const auto con = run_stream(b, vocab, scheme, n, queries, cfg, ClockMode::Concurrent);
  int mismatches = 0;
  for (size_t k = 0; k < sim.frames.size(); ++k) {
    if (sim.frames[k].decision != con.frames[k].decision || sim.frames[k].response_text != con.frames[k].response_text)
      ++mismatches;
  }
  return {"simulated and concurrent decisions agree (" + name + ")", mismatches == 0,
          std::to_string(mismatches) + " of " + std::to_string(n) + " frames differ"};
}

int bench_cmd(const Global& g, const BenchArgs& a, std::ostream& out) {
  if (a.checkpoints.empty()) throw ConfigError("bench needs at least one --checkpoint");
  struct Named {
    std::string name, path;
    json config;
  };
  std::vector<Named> named;
  for (const auto& c : a.checkpoints) {
    const auto eq = c.find('=');
    Named n;
    n.path = eq == std::string::npos ? c : c.substr(eq + 1);
    n.config = checkpoint_config(n.path);
    n.name = eq == std::string::npos ? n.config.value("train", json::object()).value("scheme", "model") : c.substr(0, eq);
    named.push_back(std::move(n));
  }
  const RunConfig cfg = resolve(named.front().config, g, json::object());
  for (const auto& n : named) {
    if (world_config_from_json(n.config.value("world", json::object())) != cfg.world) {
      throw ConfigError("checkpoint " + n.path + " was trained on a different world config");
    }
  }
  require_file(a.data, "evaluation data");
  const std::vector<StreamSample> samples = read_jsonl(a.data);
  const std::string tp_path = a.throughput_sample.empty() ? a.data : a.throughput_sample;
  require_file(tp_path, "throughput sample");
  const std::vector<StreamSample> tp_samples = read_jsonl(tp_path);
  if (a.throughput_index < 0 || a.throughput_index >= static_cast<int>(tp_samples.size())) {
    throw ConfigError("throughput sample index out of range");
  }
  const StreamSample& tp = tp_samples[static_cast<size_t>(a.throughput_index)];
  std::vector<double> latencies;
  {
    std::stringstream ss(a.latency_sweep);
    std::string part;
    while (std::getline(ss, part, ',')) {
      try {
        latencies.push_back(std::stod(part));
      } catch (const std::logic_error&) {
        throw ConfigError("latency sweep must be a comma-separated list of milliseconds, got " + a.latency_sweep);
      }
    }
  }
  const Vocabulary vocab = Vocabulary::standard(cfg.model.shared_stream_eos);
  const fs::path dir = make_run_dir(g.out, "bench");
  json inputs = {{"data", a.data}, {"throughput_sample", tp_path}, {"throughput_index", a.throughput_index},
                 {"latency_sweep", a.latency_sweep}, {"untrained", a.untrained}, {"checkpoints", json::array()}};
  for (const auto& n : named) inputs["checkpoints"].push_back({{"name", n.name}, {"path", n.path}});
  write_snapshot(dir, "bench", cfg, inputs);

  std::vector<Check> checks;
  const std::vector<AblationRow> rows = with_precision(cfg.precision, [&](auto tag) {
    using S = decltype(tag);
    std::vector<ModelParams<S>> params;
    params.reserve(named.size() + 1);
    std::vector<AblationEntry<S>> entries;
    for (const auto& n : named) {
      params.push_back(load_checkpoint<S>(n.path));
      const CheckpointInfo info = read_checkpoint_info(n.path);
      const Scheme scheme = parse_scheme(n.config.at("train").at("scheme").get<std::string>());
      entries.push_back({n.name, scheme, &params.back(), info.metadata.value("train_tokens", int64_t{0})});
    }
    if (a.untrained) {
      params.push_back(init_model<S>(params.front().config, cfg.seed));
      entries.push_back({"untrained", Scheme::Streaming, &params.back(), 0});
    }
    std::vector<AblationRow> r = run_ablation(entries, samples, cfg.world, vocab, cfg.inference, tp);

    std::ostringstream csv;
    csv << "method,scheme,decode_ms_per_token,processed_fps,frames_skipped,peak_queue_depth,peak_cache_tokens,max_lag\n";
    for (const auto& e : entries) {
      if (e.name == "untrained") continue;
      for (double ms : latencies) {
        InferenceConfig ic = cfg.inference;
        ic.decode_ms_per_token = ms;
        const auto t = stream_sample(*e.params, tp, cfg.world, vocab, e.scheme, ic);
        csv << e.name << ',' << scheme_name(e.scheme) << ',' << fixed(ms, 3) << ',' << fixed(t.stats.processed_fps, 6)
            << ',' << t.stats.frames_skipped << ',' << t.stats.peak_queue_depth << ',' << t.stats.peak_cache_tokens
            << ',' << fixed(t.stats.max_lag, 6) << '\n';
      }
    }
    write_text(dir / "latency_sweep.csv", csv.str());

    if (a.check_concurrent) {
      for (const auto& e : entries) {
        if (e.name == "untrained") continue;
        checks.push_back(concurrent_check(e.name, *e.params, tp, cfg.world, vocab, e.scheme, cfg.inference));
      }
    }
    return r;
  });
  write_ablation(rows, dir);

  auto ordering = ordering_checks(rows);
  ordering.insert(ordering.end(), checks.begin(), checks.end());
  json jc = json::array();
  bool all = true;
  out << ablation_markdown(rows) << "\n";
  for (const auto& c : ordering) {
    jc.push_back({{"check", c.name}, {"pass", c.pass}, {"detail", c.detail}});
    all = all && c.pass;
    out << (c.pass ? "PASS " : "FAIL ") << c.name << " (" << c.detail << ")\n";
  }
  write_text(dir / "assertions.json", jc.dump(2) + "\n");
  out << "-> " << dir.string() << "\n";
  return all ? kExitOk : kExitAssertion;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Streaming video dialogue toy: data generation, training, evaluation, replay and benchmarks", "live"};
  app.require_subcommand(1);
  app.fallthrough();
  Global g;
  uint64_t seed = 0;
  std::string precision;
  auto* seed_opt = app.add_option("--seed", seed, "Global seed for data, initialization and sample order");
  auto* prec_opt = app.add_option("--precision", precision, "Floating point precision")->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("--config", g.config, "JSON run config; flags override its values");
  app.add_option("--set", g.sets, "Override a config value, e.g. --set train.epochs=3");
  app.add_option("--out", g.out, std::string("Output directory (default: $") + kOutputRootEnv + "/<command>-<time>)");

  auto* gen = app.add_subcommand("gen-data", "Generate train and val JSONL splits");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a model on a JSONL dataset");
  tr->add_option("--data", ta.data, "Training JSONL")->required();
  tr->add_option("--scheme", ta.scheme, "streaming | interleaved | per_frame");
  tr->add_option("--epochs", ta.epochs, "Epochs");
  tr->add_option("--lr", ta.lr, "Learning rate");
  tr->add_option("--resume", ta.resume, "Continue from the checkpoint of this run directory");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Compute LM-PPL, TimeDiff, Fluency and LG-Match");
  ev->add_option("--checkpoint", ea.checkpoint, "Checkpoint file")->required();
  ev->add_option("--data", ea.data, "Evaluation JSONL")->required();
  auto* th = ev->add_option("--theta", ea.theta, "Silence threshold (default 0.6)");
  ev->add_option("--theta-sweep", ea.sweep, "start:stop:step, one metrics row per theta")->excludes(th);
  ev->add_option("--workers", ea.workers, "Parallel samples (0 = hardware threads)");

  StreamArgs sa;
  auto* st = app.add_subcommand("stream", "Replay one sample through the real-time engine");
  st->add_option("--checkpoint", sa.checkpoint, "Checkpoint file")->required();
  st->add_option("--sample", sa.sample, "JSONL holding the sample")->required();
  st->add_option("--index", sa.index, "Sample index in the file");
  st->add_option("--theta", sa.theta, "Silence threshold");
  st->add_option("--fps", sa.fps, "Input frame rate");
  st->add_option("--decode-ms", sa.decode_ms, "Milliseconds per appended cache position");
  st->add_option("--encode-ms", sa.encode_ms, "Milliseconds per encoded frame");
  st->add_option("--queue", sa.queue, "Frame FIFO capacity");
  st->add_option("--skip-policy", sa.skip_policy, "drop_oldest | block");
  st->add_option("--mode", sa.mode, "simulated | concurrent");

  BenchArgs ba;
  auto* be = app.add_subcommand("bench", "Ablation table, ordering checks and throughput curves");
  be->add_option("--checkpoint", ba.checkpoints, "Checkpoint file, optionally name=path; repeatable")->required();
  be->add_option("--data", ba.data, "Evaluation JSONL")->required();
  be->add_option("--throughput-sample", ba.throughput_sample, "JSONL for the throughput stream (default: --data)");
  be->add_option("--throughput-index", ba.throughput_index, "Sample index for the throughput stream");
  be->add_option("--latency-sweep", ba.latency_sweep, "Comma-separated decode_ms_per_token values");
  be->add_flag("--untrained,!--no-untrained", ba.untrained, "Include a freshly initialized model row");
  be->add_flag("--check-concurrent", ba.check_concurrent, "Compare simulated and concurrent decisions");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }
  if (seed_opt->count() > 0) g.seed = seed;
  if (prec_opt->count() > 0) g.precision = precision;

  try {
    if (gen->parsed()) return gen_data(g, out, err);
    if (tr->parsed()) return train_cmd(g, ta, out);
    if (ev->parsed()) return eval_cmd(g, ea, out);
    if (st->parsed()) return stream_cmd(g, sa, out);
    if (be->parsed()) return bench_cmd(g, ba, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace live
