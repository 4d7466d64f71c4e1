#include "tonguesync/cli.hpp"

#include <omp.h>
#include <signal.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "tonguesync/data_io.hpp"
#include "tonguesync/error.hpp"
#include "tonguesync/experiment/design.hpp"
#include "tonguesync/experiment/results.hpp"
#include "tonguesync/experiment/server.hpp"
#include "tonguesync/experiment/session.hpp"
#include "tonguesync/nn/checkpoint.hpp"
#include "tonguesync/sampling.hpp"
#include "tonguesync/stats.hpp"
#include "tonguesync/sync.hpp"

namespace tonguesync::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kValidation:
    case ErrorKind::kRange:
    case ErrorKind::kShape:
    case ErrorKind::kPrecondition:
      return kInvalid;
    case ErrorKind::kNumeric:
      return kNumericFailure;
    default:
      return kDataError;
  }
}

// --- config ---------------------------------------------------------------------

namespace {

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_real(const std::string& text) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size() || !std::isfinite(v)) throw ValidationError("'" + text + "' is not a number");
  return v;
}

std::uint64_t to_unsigned(const std::string& text) {
  if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos) {
    throw ValidationError("'" + text + "' is not a non-negative integer");
  }
  try {
    return std::stoull(text);
  } catch (const std::exception&) {
    throw ValidationError("'" + text + "' is out of range");
  }
}

bool to_bool(const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ValidationError("'" + text + "' is not a boolean");
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, sep)) out.push_back(item);
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

// "23x5p2,64x5p2": filters x kernel, optional p pool.
std::vector<nn::ConvSpec> to_convs(const std::string& text) {
  std::vector<nn::ConvSpec> out;
  for (const auto& item : split(text, ',')) {
    const auto x = item.find('x');
    if (x == std::string::npos) throw ValidationError("conv spec '" + item + "' must be FILTERSxKERNEL[pPOOL]");
    const auto p = item.find('p', x);
    nn::ConvSpec c;
    c.filters = to_unsigned(item.substr(0, x));
    c.kernel = to_unsigned(item.substr(x + 1, p == std::string::npos ? std::string::npos : p - x - 1));
    c.pool = p == std::string::npos ? 1 : to_unsigned(item.substr(p + 1));
    out.push_back(c);
  }
  return out;
}

std::string from_convs(const std::vector<nn::ConvSpec>& convs) {
  std::string out;
  for (const auto& c : convs) {
    if (!out.empty()) out += ",";
    out += std::to_string(c.filters) + "x" + std::to_string(c.kernel);
    if (c.pool != 1) out += "p" + std::to_string(c.pool);
  }
  return out;
}

std::vector<std::size_t> to_sizes(const std::string& text) {
  std::vector<std::size_t> out;
  for (const auto& item : split(text, ',')) out.push_back(to_unsigned(item));
  return out;
}

std::string from_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t x : v) out += (out.empty() ? "" : ",") + std::to_string(x);
  return out;
}

struct Field {
  const char* name;
  std::function<void(PipelineConfig&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

#define REAL_FIELD(key, member)                                                        \
  Field {                                                                              \
    key, [](PipelineConfig& c, const std::string& v) { c.member = to_real(v); },       \
        [](const PipelineConfig& c) { return format_number(static_cast<double>(c.member)); } \
  }
#define SIZE_FIELD(key, member)                                                         \
  Field {                                                                               \
    key, [](PipelineConfig& c, const std::string& v) { c.member = to_unsigned(v); },    \
        [](const PipelineConfig& c) { return std::to_string(c.member); }                \
  }
#define INT_FIELD(key, member)                                                                        \
  Field {                                                                                             \
    key, [](PipelineConfig& c, const std::string& v) { c.member = static_cast<int>(std::lround(to_real(v))); }, \
        [](const PipelineConfig& c) { return std::to_string(c.member); }                              \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      REAL_FIELD("audio_rate", audio_rate),
      REAL_FIELD("frame_rate", frame_rate),
      SIZE_FIELD("frame_height", frame_height),
      SIZE_FIELD("frame_width", frame_width),
      SIZE_FIELD("frames_per_window", frames_per_window),
      SIZE_FIELD("mfcc.num_coefficients", mfcc.num_coefficients),
      SIZE_FIELD("mfcc.num_mel_filters", mfcc.num_mel_filters),
      SIZE_FIELD("mfcc.fft_size", mfcc.fft_size),
      SIZE_FIELD("mfcc.feature_dim", mfcc.feature_dim),
      REAL_FIELD("mfcc.pre_emphasis", mfcc.pre_emphasis),
      REAL_FIELD("mfcc.log_floor", mfcc.log_floor),
      Field{"model.ultrasound_convs", [](PipelineConfig& c, const std::string& v) { c.model.ultrasound.convs = to_convs(v); },
            [](const PipelineConfig& c) { return from_convs(c.model.ultrasound.convs); }},
      Field{"model.ultrasound_fc", [](PipelineConfig& c, const std::string& v) { c.model.ultrasound.fc = to_sizes(v); },
            [](const PipelineConfig& c) { return from_sizes(c.model.ultrasound.fc); }},
      Field{"model.audio_convs", [](PipelineConfig& c, const std::string& v) { c.model.audio.convs = to_convs(v); },
            [](const PipelineConfig& c) { return from_convs(c.model.audio.convs); }},
      Field{"model.audio_fc", [](PipelineConfig& c, const std::string& v) { c.model.audio.fc = to_sizes(v); },
            [](const PipelineConfig& c) { return from_sizes(c.model.audio.fc); }},
      Field{"model.final_activation",
            [](PipelineConfig& c, const std::string& v) { c.model.final_activation = to_bool(v); },
            [](const PipelineConfig& c) { return std::string(c.model.final_activation ? "true" : "false"); }},
      REAL_FIELD("model.margin", model.margin),
      REAL_FIELD("model.bn_epsilon", model.bn_epsilon),
      REAL_FIELD("model.bn_momentum", model.bn_momentum),
      REAL_FIELD("train.learning_rate", train.learning_rate),
      SIZE_FIELD("train.batch_size", train.batch_size),
      SIZE_FIELD("train.epochs", train.epochs),
      SIZE_FIELD("train.plateau_patience", train.plateau_patience),
      REAL_FIELD("train.plateau_factor", train.plateau_factor),
      REAL_FIELD("train.plateau_min_delta", train.plateau_min_delta),
      REAL_FIELD("train.threshold", train.threshold),
      Field{"samples.align_hardware_offset",
            [](PipelineConfig& c, const std::string& v) { c.align_hardware_offset = to_bool(v); },
            [](const PipelineConfig& c) { return std::string(c.align_hardware_offset ? "true" : "false"); }},
      REAL_FIELD("split.validation_fraction", validation_fraction),
      REAL_FIELD("split.test_fraction", test_fraction),
      Field{"grid", [](PipelineConfig& c, const std::string& v) { c.grid = v; },
            [](const PipelineConfig& c) { return c.grid; }},
      INT_FIELD("boundary.hard_lower_ms", hard.lower_ms),
      INT_FIELD("boundary.hard_upper_ms", hard.upper_ms),
      INT_FIELD("boundary.soft_lower_ms", soft.lower_ms),
      INT_FIELD("boundary.soft_upper_ms", soft.upper_ms),
      Field{"group_by", [](PipelineConfig& c, const std::string& v) { c.group_by = v; },
            [](const PipelineConfig& c) { return c.group_by; }},
      SIZE_FIELD("seed", seed),
      SIZE_FIELD("jobs", jobs),
  };
  return table;
}

#undef REAL_FIELD
#undef SIZE_FIELD
#undef INT_FIELD

}  // namespace

MfccConfig PipelineConfig::mfcc_for_window() const {
  MfccConfig m = MfccConfig::for_window(frames_per_window, frame_rate);
  m.num_coefficients = mfcc.num_coefficients;
  m.num_mel_filters = mfcc.num_mel_filters;
  m.fft_size = mfcc.fft_size;
  m.feature_dim = mfcc.feature_dim;
  m.pre_emphasis = mfcc.pre_emphasis;
  m.log_floor = mfcc.log_floor;
  m.validate();
  return m;
}

nn::ModelConfig PipelineConfig::model_config() const {
  nn::ModelConfig m = model;
  m.frames_per_window = frames_per_window;
  m.frame_height = frame_height;
  m.frame_width = frame_width;
  m.audio_rows = rows_per_window(frames_per_window, frame_rate, mfcc_for_window());
  m.feature_dim = mfcc.feature_dim;
  m.validate();
  return m;
}

void apply_config(PipelineConfig& cfg, std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ValidationError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return key == f.name; });
    if (it == table.end()) throw ValidationError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    try {
      it->set(cfg, value);
    } catch (const ValidationError& e) {
      throw ValidationError("config line " + std::to_string(line_no) + " (" + key + "): " + e.what());
    }
  }
}

std::string format_config(const PipelineConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.name) + " = " + f.get(cfg) + "\n";
  return out;
}

// --- commands -------------------------------------------------------------------

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finaliser over the pair.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  bool overwrite = false;
};

struct Context {
  PipelineConfig cfg;
  bool overwrite = false;
  std::ostream& out;
  std::ostream& err;
};

void check_output(const fs::path& path, bool overwrite) {
  if (path.empty() || path == "-") return;
  if (fs::exists(path) && !overwrite) {
    throw ValidationError("output " + path.string() + " already exists; pass --overwrite to replace it");
  }
}

void check_output_dir(const fs::path& path, bool overwrite) {
  if (fs::exists(path) && !fs::is_directory(path)) throw ValidationError(path.string() + " is not a directory");
  if (fs::exists(path) && !fs::is_empty(path) && !overwrite) {
    throw ValidationError("output directory " + path.string() + " is not empty; pass --overwrite to replace it");
  }
}

void emit(Context& ctx, const fs::path& path, const std::string& text) {
  if (path.empty() || path == "-") {
    ctx.out << text;
    return;
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_text(path, text);
}

std::vector<std::string> require_utterances(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("input directory " + dir.string() + " does not exist");
  auto ids = list_utterances(dir);
  if (ids.empty()) throw EmptyDataError("no utterances in " + dir.string());
  return ids;
}

std::string extra_value(const UltrasoundParams& p, std::string_view key) {
  for (const auto& [k, v] : p.extra) {
    if (k == key) return v;
  }
  return {};
}

void set_extra(UltrasoundParams& p, const std::string& key, const std::string& value) {
  for (auto& [k, v] : p.extra) {
    if (k == key) return;
  }
  p.extra.emplace_back(key, value);
}

std::string dataset_name(const fs::path& dir) {
  const fs::path clean = dir.lexically_normal();
  const std::string name = (clean.has_filename() ? clean.filename() : clean.parent_path().filename()).string();
  return name.empty() ? "data" : name;
}

int run_preprocess(Context& ctx, const fs::path& in, const fs::path& out) {
  const PipelineConfig& cfg = ctx.cfg;
  check_output_dir(out, ctx.overwrite);
  const auto ids = require_utterances(in);
  const std::string dataset = dataset_name(in);
  std::vector<UtteranceRecord> recs(ids.size());
  std::vector<std::exception_ptr> errors(ids.size());
  const auto n = static_cast<std::ptrdiff_t>(ids.size());
#pragma omp parallel for schedule(dynamic) num_threads(static_cast<int>(cfg.jobs))
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    try {
      UtteranceRecord rec = read_utterance(in, ids[k]);
      rec.audio = resample_audio(rec.audio, cfg.audio_rate);
      rec.ultrasound = resize_sequence(resample_ultrasound(rec.ultrasound, cfg.frame_rate), cfg.frame_height, cfg.frame_width);
      set_extra(rec.ultrasound.params, "Dataset", dataset);
      recs[k] = std::move(rec);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  fs::create_directories(out);
  for (const auto& rec : recs) write_utterance(rec, out);
  ctx.out << "preprocessed " << recs.size() << " utterances into " << out.string() << "\n";
  return kOk;
}

int run_make_samples(Context& ctx, const fs::path& in, const fs::path& out) {
  const PipelineConfig& cfg = ctx.cfg;
  check_output(out, ctx.overwrite);
  const auto ids = require_utterances(in);
  const MfccConfig mfcc = cfg.mfcc_for_window();
  SampleSet set;
  std::size_t short_count = 0;
  for (const auto& id : ids) {
    UtteranceRecord rec = read_utterance(in, id);
    if (cfg.align_hardware_offset) {
      try {
        rec = apply_offset(rec, rec.ultrasound.params.hardware_offset_ms);
      } catch (const RangeError& e) {
        ctx.err << "warning: " << id << ": " << e.what() << "; skipped\n";
        continue;
      }
    }
    WindowSet ws = extract_window_pairs(rec, cfg.frames_per_window, mfcc);
    if (ws.too_short) {
      ++short_count;
      ctx.err << "warning: " << id << " is shorter than one window; skipped\n";
      continue;
    }
    for (auto& p : ws.pairs) set.windows.push_back(std::move(p));
  }
  if (set.windows.empty()) throw EmptyDataError("no windows extracted from " + in.string());
  const WindowPair& first = set.windows.front();
  for (const auto& w : set.windows) {
    if (w.height != first.height || w.width != first.width || w.audio.cols != first.audio.cols) {
      throw ShapeError("utterance " + w.utterance_id + " has frame size " + std::to_string(w.height) + "x" +
                       std::to_string(w.width) + ", expected " + std::to_string(first.height) + "x" +
                       std::to_string(first.width) + "; preprocess the data first");
    }
  }
  set.frames = first.frames;
  set.height = first.height;
  set.width = first.width;
  set.audio_rows = first.audio.rows;
  set.feature_dim = first.audio.cols;
  set.samples = make_selfsup_set(set.windows, derive_seed(cfg.seed, 1));
  set.splits = split_by_utterance(set.windows, set.samples, cfg.validation_fraction, cfg.test_fraction,
                                  derive_seed(cfg.seed, 2));
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_file_bytes(out, write_sample_set(set));
  ctx.out << set.windows.size() << " windows, " << set.samples.size() << " samples (" << set.indices(Split::kTrain).size()
          << " train, " << set.indices(Split::kValidation).size() << " validation, "
          << set.indices(Split::kTest).size() << " test)";
  if (short_count) ctx.out << ", " << short_count << " utterances too short";
  ctx.out << "\n";
  return kOk;
}

int run_train(Context& ctx, const fs::path& samples, const fs::path& out, const fs::path& report_path) {
  const PipelineConfig& cfg = ctx.cfg;
  check_output(out, ctx.overwrite);
  check_output(report_path, ctx.overwrite);
  const auto bytes = read_file_bytes(samples);
  const SampleSet set = read_sample_set(bytes);
  nn::ModelConfig mc = cfg.model;
  mc.frames_per_window = set.frames;
  mc.frame_height = set.height;
  mc.frame_width = set.width;
  mc.audio_rows = set.audio_rows;
  mc.feature_dim = set.feature_dim;
  mc.validate();
  nn::TwoStreamModel<float> model(mc, derive_seed(cfg.seed, 3));
  SampleSource train_src(set, set.indices(Split::kTrain));
  auto val_idx = set.indices(Split::kValidation);
  if (val_idx.empty()) {
    ctx.err << "warning: no validation utterances; validating on the training set\n";
    val_idx = set.indices(Split::kTrain);
  }
  SampleSource val_src(set, val_idx);
  SampleSource test_src(set, set.indices(Split::kTest));
  nn::TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.seed, 4);
  const nn::TrainReport report =
      nn::train(model, train_src, val_src, tc, &test_src, [&](std::size_t epoch, const nn::TrainReport& r) {
        char line[160];
        std::snprintf(line, sizeof line, "epoch %zu  train loss %.6f  validation loss %.6f  lr %.3g\n", epoch + 1,
                      r.train_loss.back(), r.val_loss.back(), r.learning_rate.back());
        ctx.out << line;
      });
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  nn::save_model(model, out);

  ordered_json j;
  j["train_loss"] = report.train_loss;
  j["validation_loss"] = report.val_loss;
  j["learning_rate"] = report.learning_rate;
  j["lr_reductions"] = report.lr_reductions;
  j["train_accuracy"] = report.train_accuracy;
  j["validation_accuracy"] = report.val_accuracy;
  if (report.test_accuracy) {
    j["test_accuracy"] = *report.test_accuracy;
  } else {
    j["test_accuracy"] = nullptr;
  }
  j["diverged"] = report.diverged;
  if (!report_path.empty()) emit(ctx, report_path, j.dump(2) + "\n");
  char line[160];
  std::snprintf(line, sizeof line, "accuracy: train %.4f  validation %.4f\n", report.train_accuracy,
                report.val_accuracy);
  ctx.out << line;
  if (report.diverged) {
    ctx.err << "error: training diverged; saved the last finite weights to " << out.string() << "\n";
    return kNumericFailure;
  }
  return kOk;
}

int run_sync(Context& ctx, const fs::path& model_path, const fs::path& in, const fs::path& out,
             const std::string& grid_spec) {
  const PipelineConfig& cfg = ctx.cfg;
  const CandidateGrid grid = parse_grid(grid_spec.empty() ? cfg.grid : grid_spec);
  check_output(out, ctx.overwrite);
  const auto ids = require_utterances(in);
  const nn::TwoStreamModel<float> model = nn::load_model(model_path);
  SyncOptions opts;
  opts.frames_per_window = model.config().frames_per_window;
  opts.mfcc = cfg.mfcc_for_window();
  const std::string fallback_dataset = dataset_name(in);
  std::string lines;
  std::size_t written = 0;
  for (const auto& id : ids) {
    const UtteranceRecord rec = read_utterance(in, id);
    SyncPrediction pred;
    try {
      pred = synchronise(rec, model, grid, opts);
    } catch (const UnsyncableError& e) {
      ctx.err << "warning: " << id << ": " << e.what() << "; skipped\n";
      continue;
    }
    PredictionContext pc;
    pc.type = std::string(to_string(rec.type));
    pc.dataset = extra_value(rec.ultrasound.params, "Dataset");
    if (pc.dataset.empty()) pc.dataset = fallback_dataset;
    pc.speaker = extra_value(rec.ultrasound.params, "Speaker");
    if (pc.speaker.empty()) pc.speaker = "unknown";
    pc.hardware_offset_ms = rec.ultrasound.params.hardware_offset_ms;
    lines += prediction_to_json(pred, pc) + "\n";
    ++written;
  }
  emit(ctx, out, lines);
  if (!out.empty() && out != "-") ctx.out << written << " predictions written to " << out.string() << "\n";
  return kOk;
}

int run_evaluate(Context& ctx, const fs::path& predictions, const fs::path& out, const std::string& group_by,
                 const std::string& format) {
  const PipelineConfig& cfg = ctx.cfg;
  const GroupKey key = parse_group_key(group_by.empty() ? cfg.group_by : group_by);
  if (format != "text" && format != "jsonl") throw ValidationError("format must be text or jsonl");
  check_output(out, ctx.overwrite);
  const auto records = read_predictions(read_file_text(predictions));
  std::vector<EvalRow> rows;
  for (const auto& r : records) {
    rows.push_back(make_row(r.prediction.utterance_id, r.context.dataset, r.context.type, r.context.speaker,
                            r.prediction.predicted_offset_ms,
                            static_cast<int>(std::llround(r.context.hardware_offset_ms))));
  }
  const Report report = aggregate(rows, key, cfg.hard, cfg.soft);
  emit(ctx, out, format == "text" ? format_report(report) : report_to_jsonl(report));
  return kOk;
}

std::vector<experiment::PoolEntry> read_pool(const std::vector<std::string>& dirs) {
  std::vector<experiment::PoolEntry> pool;
  for (const auto& dir : dirs) {
    for (const auto& id : require_utterances(dir)) {
      const UtteranceRecord rec = read_utterance(dir, id);
      pool.push_back({rec.id, std::string(to_string(rec.type)), rec.ultrasound.params.hardware_offset_ms});
    }
  }
  return pool;
}

experiment::UtteranceLoader directory_loader(std::vector<std::string> dirs) {
  return [dirs = std::move(dirs)](const std::string& id) {
    for (const auto& dir : dirs) {
      if (fs::exists(fs::path(dir) / (id + ".param"))) return read_utterance(dir, id);
    }
    throw NotFoundError("utterance " + id + " not found in the media directories");
  };
}

struct BuildOptions {
  std::string kind = "threshold";
  std::string id;
  std::vector<std::string> data;
  std::string predictions;
  std::vector<std::string> control_data;
  std::optional<std::size_t> participants, per_participant, shared, tests, controls;
  fs::path out;
};

int run_experiment_build(Context& ctx, const BuildOptions& o) {
  check_output(o.out, ctx.overwrite);
  experiment::Experiment exp;
  if (o.kind == "threshold") {
    if (o.data.empty()) throw ValidationError("threshold experiments need --data");
    experiment::ThresholdPlan plan;
    if (!o.id.empty()) plan.experiment_id = o.id;
    if (o.participants) plan.participants = *o.participants;
    if (o.per_participant) plan.per_participant = *o.per_participant;
    if (o.shared) plan.shared_per_pair = *o.shared;
    plan.seed = derive_seed(ctx.cfg.seed, 5);
    exp = experiment::build_threshold_experiment(read_pool(o.data), plan);
  } else if (o.kind == "preference") {
    if (o.predictions.empty() || o.control_data.empty()) {
      throw ValidationError("preference experiments need --predictions and --control-data");
    }
    experiment::PreferencePlan plan;
    if (!o.id.empty()) plan.experiment_id = o.id;
    if (o.participants) plan.participants = *o.participants;
    if (o.tests) plan.test_per_participant = *o.tests;
    if (o.controls) plan.controls = *o.controls;
    plan.seed = derive_seed(ctx.cfg.seed, 6);
    std::vector<experiment::PreferenceCandidate> candidates;
    for (const auto& r : read_predictions(read_file_text(o.predictions))) {
      candidates.push_back({r.prediction.utterance_id, r.context.type,
                            static_cast<double>(r.prediction.predicted_offset_ms), r.context.hardware_offset_ms});
    }
    exp = experiment::build_preference_experiment(candidates, read_pool(o.control_data), plan);
  } else {
    throw ValidationError("experiment kind must be threshold or preference");
  }
  emit(ctx, o.out, experiment::experiment_to_json(exp));
  ctx.out << exp.stimuli.size() << " stimuli, " << exp.sessions.size() << " sessions\n";
  for (const auto& s : exp.sessions) ctx.out << s.participant_id << "\t" << s.token << "\n";
  return kOk;
}

experiment::Experiment load_experiment(const fs::path& path) {
  return experiment::experiment_from_json(read_file_text(path));
}

int run_experiment_serve(Context& ctx, const fs::path& exp_path, const fs::path& store_path,
                         const std::vector<std::string>& media_dirs, const std::string& host, int port) {
  if (media_dirs.empty()) throw ValidationError("serve needs at least one --data directory for media");
  experiment::ExperimentStore store(load_experiment(exp_path), store_path);
  if (store.truncated_bytes()) {
    ctx.err << "warning: dropped " << store.truncated_bytes() << " bytes of an incomplete event at the end of "
            << store_path.string() << "\n";
  }
  // Block the stop signals before the server threads start so only
  // sigwait below receives them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);
  experiment::ExperimentServer server(store, directory_loader(media_dirs));
  const int bound = server.start(host, port);
  ctx.out << "serving experiment " << store.experiment().experiment_id << " on http://" << host << ":" << bound
          << std::endl;
  int received = 0;
  sigwait(&signals, &received);
  server.stop();
  ctx.out << "stopped\n";
  return kOk;
}

std::vector<stats::JudgmentRecord> load_judgments(const experiment::Experiment& exp, const fs::path& store_path) {
  if (!fs::exists(store_path)) throw IoError("judgment store " + store_path.string() + " does not exist");
  experiment::ExperimentStore store(exp, store_path);
  return store.judgments();
}

int run_experiment_results(Context& ctx, const fs::path& exp_path, const fs::path& store_path, bool partial,
                           const fs::path& out) {
  check_output(out, ctx.overwrite);
  const auto exp = load_experiment(exp_path);
  const auto judgments = load_judgments(exp, store_path);
  emit(ctx, out, experiment::experiment_results(exp, judgments, partial).dump(2) + "\n");
  return kOk;
}

int run_stats_wald(Context& ctx, double p, std::size_t n, const std::string& method) {
  if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("proportion must lie in [0, 1]");
  if (n == 0) throw ValidationError("sample size must be positive");
  stats::Interval ci;
  if (method == "wald") {
    ci = stats::wald_ci(p, n);
  } else if (method == "wilson") {
    ci = stats::wilson_ci(p, n);
  } else {
    throw ValidationError("method must be wald or wilson");
  }
  ctx.out << ordered_json{{"p", p}, {"n", n}, {"method", method}, {"low", ci.low}, {"high", ci.high}}.dump() << "\n";
  return kOk;
}

int run_stats_binomial(Context& ctx, std::size_t k, std::size_t n, double p0) {
  if (k > n) throw ValidationError("successes exceed trials");
  if (!(p0 > 0.0 && p0 < 1.0)) throw ValidationError("p0 must lie in (0, 1)");
  ctx.out << ordered_json{{"k", k}, {"n", n}, {"p0", p0}, {"p_value", stats::exact_binomial_test(k, n, p0)}}.dump()
          << "\n";
  return kOk;
}

int run_stats_logistic(Context& ctx, const fs::path& exp_path, const fs::path& store_path,
                       const std::vector<std::string>& data, const fs::path& dict_path, double l2,
                       const fs::path& out) {
  check_output(out, ctx.overwrite);
  const auto exp = load_experiment(exp_path);
  const auto judgments = load_judgments(exp, store_path);
  std::map<std::string, std::string> prompts;
  for (const auto& dir : data) {
    for (const auto& id : require_utterances(dir)) prompts.emplace(id, read_utterance(dir, id).prompt);
  }
  const auto dict = stats::parse_dictionary(read_file_text(dict_path));
  const auto design = experiment::logistic_design(exp, judgments, prompts, dict);
  stats::LogisticOptions opts;
  opts.l2_strength = l2;
  const stats::LogisticModel m = stats::fit_logistic(design.x, design.y, opts);
  const double ll = stats::log_likelihood(m, design.x, design.y);
  const double ll0 = stats::null_log_likelihood(design.y);
  ordered_json j;
  j["observations"] = design.y.size();
  j["features"] = design.columns.size();
  j["l2_strength"] = m.l2_strength;
  j["converged"] = m.converged;
  j["iterations"] = m.iterations;
  j["log_loss"] = m.log_loss;
  j["log_likelihood"] = ll;
  j["null_log_likelihood"] = ll0;
  j["pseudo_r2"] = stats::mcfadden_r2(ll, ll0);
  ordered_json weights;
  for (std::size_t i = 0; i < design.columns.size(); ++i) weights[design.columns[i]] = m.weights[i];
  j["weights"] = std::move(weights);
  emit(ctx, out, j.dump(2) + "\n");
  return kOk;
}

// CLI11 reads "-1.75:..." as an option name; glue such values to their flag.
std::vector<std::string> join_negative_values(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--grid" && i + 1 < args.size() && args[i + 1].size() > 1 && args[i + 1][0] == '-' &&
        args[i + 1][1] != '-') {
      out.push_back("--grid=" + args[i + 1]);
      ++i;
    } else {
      out.push_back(args[i]);
    }
  }
  return out;
}

}  // namespace

int dispatch(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Synchronise ultrasound tongue imaging with speech audio, and run the perceptual experiments.",
               "tonguesync"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, std::string("Config file of key = value lines (default: $") + kConfigEnv + ")");
  app.add_option("--seed", g.seed, "Seed for every stochastic step");
  app.add_option("--jobs", g.jobs, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--overwrite", g.overwrite, "Replace existing outputs");

  std::function<int(Context&)> action;

  std::string in, outp, model, grid, samples, report, predictions, group_by, format = "text";
  auto* pre = app.add_subcommand("preprocess", "Resample audio and ultrasound and resize frames");
  pre->add_option("--in", in, "Raw utterance directory")->required();
  pre->add_option("--out", outp, "Output directory")->required();
  pre->callback([&] { action = [&](Context& c) { return run_preprocess(c, in, outp); }; });

  auto* mk = app.add_subcommand("make-samples", "Extract windows and build the self-supervised sample set");
  mk->add_option("--in", in, "Preprocessed utterance directory")->required();
  mk->add_option("--out", outp, "Sample set file")->required();
  mk->callback([&] { action = [&](Context& c) { return run_make_samples(c, in, outp); }; });

  auto* tr = app.add_subcommand("train", "Train the two-stream model");
  tr->add_option("--samples", samples, "Sample set file")->required();
  tr->add_option("--out", outp, "Model checkpoint")->required();
  tr->add_option("--report", report, "Training report (JSON)");
  tr->callback([&] { action = [&](Context& c) { return run_train(c, samples, outp, report); }; });

  auto* sy = app.add_subcommand("sync", "Predict the offset of each utterance");
  sy->add_option("--model", model, "Model checkpoint")->required();
  sy->add_option("--in", in, "Preprocessed utterance directory")->required();
  sy->add_option("--out", outp, "Prediction file (one JSON object per line), - for stdout")->required();
  sy->add_option("--grid", grid, "Candidate offsets as min:max:step in seconds, or 'cleft'");
  sy->callback([&] { action = [&](Context& c) { return run_sync(c, model, in, outp, grid); }; });

  auto* ev = app.add_subcommand("evaluate", "Score predictions against hardware offsets");
  ev->add_option("--predictions", predictions, "Prediction file")->required();
  ev->add_option("--out", outp, "Report file (default stdout)");
  ev->add_option("--group-by", group_by, "dataset, type or speaker");
  ev->add_option("--format", format, "text or jsonl");
  ev->callback([&] { action = [&](Context& c) { return run_evaluate(c, predictions, outp, group_by, format); }; });

  auto* ex = app.add_subcommand("experiment", "Build, serve and analyse perceptual experiments");
  ex->require_subcommand(1, 1);
  BuildOptions bo;
  auto* exb = ex->add_subcommand("build", "Build an experiment definition");
  exb->add_option("--kind", bo.kind, "threshold or preference");
  exb->add_option("--id", bo.id, "Experiment id");
  exb->add_option("--data", bo.data, "Utterance directories for the threshold pool");
  exb->add_option("--predictions", bo.predictions, "Predictions for the preference pairs");
  exb->add_option("--control-data", bo.control_data, "Correctly synchronised utterances for controls");
  exb->add_option("--participants", bo.participants, "Number of participants");
  exb->add_option("--per-participant", bo.per_participant, "Threshold stimuli per participant");
  exb->add_option("--shared", bo.shared, "Threshold stimuli shared within each participant pair");
  exb->add_option("--tests", bo.tests, "Preference test stimuli per participant");
  exb->add_option("--controls", bo.controls, "Preference control stimuli");
  exb->add_option("--out", bo.out, "Experiment file")->required();
  exb->callback([&] { action = [&](Context& c) { return run_experiment_build(c, bo); }; });

  std::string exp_path, store_path, host = "127.0.0.1";
  std::vector<std::string> media;
  int port = 8080;
  bool partial = false;
  auto* exs = ex->add_subcommand("serve", "Serve participant sessions over HTTP until interrupted");
  exs->add_option("--experiment", exp_path, "Experiment file")->required();
  exs->add_option("--store", store_path, "Judgment event log")->required();
  exs->add_option("--data", media, "Utterance directories for media")->required();
  exs->add_option("--host", host, "Listen address");
  exs->add_option("--port", port, "Listen port (0 picks one)");
  exs->callback([&] {
    action = [&](Context& c) { return run_experiment_serve(c, exp_path, store_path, media, host, port); };
  });
  auto* exr = ex->add_subcommand("results", "Analyse recorded judgments");
  exr->add_option("--experiment", exp_path, "Experiment file")->required();
  exr->add_option("--store", store_path, "Judgment event log")->required();
  exr->add_flag("--partial", partial, "Allow unfinished sessions");
  exr->add_option("--out", outp, "Results file (default stdout)");
  exr->callback([&] { action = [&](Context& c) { return run_experiment_results(c, exp_path, store_path, partial, outp); }; });

  auto* st = app.add_subcommand("stats", "Statistical helpers");
  st->require_subcommand(1, 1);
  double p = 0.0, p0 = 0.5, l2 = 1.0;
  std::size_t n = 0, k = 0;
  std::string method = "wald", dict;
  auto* sw = st->add_subcommand("wald", "Binomial confidence interval");
  sw->add_option("--p", p, "Observed proportion")->required();
  sw->add_option("--n", n, "Sample size")->required();
  sw->add_option("--method", method, "wald or wilson");
  sw->callback([&] { action = [&](Context& c) { return run_stats_wald(c, p, n, method); }; });
  auto* sb = st->add_subcommand("binomial", "Two-sided exact binomial test");
  sb->add_option("--k", k, "Successes")->required();
  sb->add_option("--n", n, "Trials")->required();
  sb->add_option("--p0", p0, "Null probability");
  sb->callback([&] { action = [&](Context& c) { return run_stats_binomial(c, k, n, p0); }; });
  auto* sl = st->add_subcommand("logistic", "Regress judgment outcomes on error, participant and phones");
  sl->add_option("--experiment", exp_path, "Threshold experiment file")->required();
  sl->add_option("--store", store_path, "Judgment event log")->required();
  sl->add_option("--data", media, "Utterance directories holding the prompts")->required();
  sl->add_option("--dictionary", dict, "Pronunciation dictionary")->required();
  sl->add_option("--l2", l2, "L2 strength");
  sl->add_option("--out", outp, "Output file (default stdout)");
  sl->callback([&] {
    action = [&](Context& c) { return run_stats_logistic(c, exp_path, store_path, media, dict, l2, outp); };
  });

  std::vector<std::string> args = join_negative_values(raw_args);
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  }

  try {
    PipelineConfig cfg;
    std::string config_path = g.config_path;
    if (config_path.empty()) {
      if (const char* env = std::getenv(kConfigEnv); env && *env) config_path = env;
    }
    if (!config_path.empty()) apply_config(cfg, read_file_text(config_path));
    if (g.seed) cfg.seed = *g.seed;
    if (g.jobs) cfg.jobs = *g.jobs;
    if (cfg.jobs == 0) throw ValidationError("jobs must be positive");
    cfg.hard.validate();
    cfg.soft.validate();
    omp_set_num_threads(static_cast<int>(cfg.jobs));
    Context ctx{cfg, g.overwrite, out, err};
    return action(ctx);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
}

int dispatch(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace tonguesync::cli
