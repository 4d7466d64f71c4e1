#include "tonguesync/nn/checkpoint.hpp"

#include <string>

#include "tonguesync/data_io.hpp"
#include "tonguesync/error.hpp"
#include "../binary_io.hpp"

namespace tonguesync::nn {
namespace {

using binary::Reader;
using binary::Writer;

constexpr char kMagic[8] = {'T', 'S', 'Y', 'N', 'C', 'K', 'P', 'T'};

void write_stream(Writer& w, const StreamSpec& s) {
  w.size(s.convs.size());
  for (const ConvSpec& c : s.convs) {
    w.size(c.filters);
    w.size(c.kernel);
    w.size(c.pool);
  }
  w.size(s.fc.size());
  for (std::size_t u : s.fc) w.size(u);
}

StreamSpec read_stream(Reader& r) {
  StreamSpec s;
  const std::uint32_t n_conv = r.u32();
  if (n_conv > 64) throw FormatError("checkpoint declares " + std::to_string(n_conv) + " conv layers");
  for (std::uint32_t i = 0; i < n_conv; ++i) {
    ConvSpec c;
    c.filters = r.u32();
    c.kernel = r.u32();
    c.pool = r.u32();
    s.convs.push_back(c);
  }
  const std::uint32_t n_fc = r.u32();
  if (n_fc > 64) throw FormatError("checkpoint declares " + std::to_string(n_fc) + " fc layers");
  for (std::uint32_t i = 0; i < n_fc; ++i) s.fc.push_back(r.u32());
  return s;
}

void write_tensor(Writer& w, const std::string& name, const Tensor<float>& t) {
  w.size(name.size());
  w.bytes(name.data(), name.size());
  w.size(t.shape().n);
  w.size(t.shape().c);
  w.size(t.shape().h);
  w.size(t.shape().w);
  for (float v : t.values()) w.f32(v);
}

void read_tensor(Reader& r, const std::string& expected_name, Tensor<float>& t) {
  const std::uint32_t len = r.u32();
  const std::string name = r.str(len);
  if (name != expected_name) throw FormatError("checkpoint tensor '" + name + "' where '" + expected_name + "' expected");
  Shape s;
  s.n = r.u32();
  s.c = r.u32();
  s.h = r.u32();
  s.w = r.u32();
  if (!(s == t.shape())) {
    throw FormatError("checkpoint tensor " + name + " has shape " + s.str() + ", model expects " + t.shape().str());
  }
  for (float& v : t.values()) v = r.f32();
}

// Buffers have no names of their own; they are named after their layer.
std::vector<std::pair<std::string, Tensor<float>*>> named_buffers(TwoStreamModel<float>& model) {
  std::vector<std::pair<std::string, Tensor<float>*>> out;
  for (Stream<float>* s : {&model.ultrasound(), &model.audio()}) {
    for (auto& layer : s->layers()) {
      auto bufs = layer->buffers();
      if (bufs.size() == 2) {
        out.emplace_back(layer->name() + ".running_mean", bufs[0]);
        out.emplace_back(layer->name() + ".running_var", bufs[1]);
      }
    }
  }
  return out;
}

}  // namespace

std::vector<std::uint8_t> serialise_model(TwoStreamModel<float>& model) {
  const ModelConfig& cfg = model.config();
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.size(cfg.frames_per_window);
  w.size(cfg.frame_height);
  w.size(cfg.frame_width);
  w.size(cfg.audio_rows);
  w.size(cfg.feature_dim);
  w.u8(cfg.final_activation ? 1 : 0);
  w.f64(cfg.margin);
  w.f64(cfg.bn_epsilon);
  w.f64(cfg.bn_momentum);
  write_stream(w, cfg.ultrasound);
  write_stream(w, cfg.audio);
  const auto params = model.params();
  const auto buffers = named_buffers(model);
  w.size(params.size() + buffers.size());
  for (const auto* p : params) write_tensor(w, p->name, p->value);
  for (const auto& [name, t] : buffers) write_tensor(w, name, *t);
  return w.take();
}

TwoStreamModel<float> deserialise_model(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "checkpoint");
  if (r.str(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) throw FormatError("not a model checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  ModelConfig cfg;
  cfg.frames_per_window = r.u32();
  cfg.frame_height = r.u32();
  cfg.frame_width = r.u32();
  cfg.audio_rows = r.u32();
  cfg.feature_dim = r.u32();
  cfg.final_activation = r.u8() != 0;
  cfg.margin = r.f64();
  cfg.bn_epsilon = r.f64();
  cfg.bn_momentum = r.f64();
  cfg.ultrasound = read_stream(r);
  cfg.audio = read_stream(r);
  constexpr std::size_t kLimit = 1 << 16;
  bool sane = cfg.frames_per_window <= kLimit && cfg.frame_height <= kLimit && cfg.frame_width <= kLimit &&
              cfg.audio_rows <= kLimit && cfg.feature_dim <= kLimit;
  for (const StreamSpec* s : {&cfg.ultrasound, &cfg.audio}) {
    for (const ConvSpec& c : s->convs) sane = sane && c.filters <= kLimit && c.kernel <= kLimit && c.pool <= kLimit;
    for (std::size_t u : s->fc) sane = sane && u <= kLimit;
  }
  if (!sane) throw FormatError("checkpoint architecture has implausible sizes");
  try {
    cfg.validate();
  } catch (const ValidationError& e) {
    throw FormatError(std::string("checkpoint architecture is invalid: ") + e.what());
  }

  TwoStreamModel<float> model(cfg, 0);
  const auto params = model.params();
  const auto buffers = named_buffers(model);
  const std::uint32_t count = r.u32();
  if (count != params.size() + buffers.size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, architecture needs " +
                      std::to_string(params.size() + buffers.size()));
  }
  for (auto* p : params) read_tensor(r, p->name, p->value);
  for (const auto& [name, t] : buffers) read_tensor(r, name, *t);
  if (!r.done()) throw FormatError("trailing bytes after checkpoint");
  return model;
}

void save_model(TwoStreamModel<float>& model, const std::filesystem::path& path) {
  write_file_bytes(path, serialise_model(model));
}

TwoStreamModel<float> load_model(const std::filesystem::path& path) {
  return deserialise_model(read_file_bytes(path));
}

}  // namespace tonguesync::nn
