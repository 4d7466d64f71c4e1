#include "tonguesync/data_io.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include "tonguesync/error.hpp"

namespace tonguesync {
namespace {

constexpr std::string_view kFramesPerSec = "FramesPerSec";
constexpr std::string_view kNumVectors = "NumVectors";
constexpr std::string_view kPixPerVector = "PixPerVector";
constexpr std::string_view kFieldOfView = "FieldOfView";
constexpr std::string_view kSyncOffsetMs = "SyncOffsetMs";
constexpr std::string_view kFirstFrameTime = "FirstFrameTimeSecs";
constexpr std::string_view kUtteranceType = "UtteranceType";
constexpr std::string_view kProbeView = "ProbeView";

struct Alias {
  std::string_view spelling;
  std::string_view canonical;
};

// Vendor spellings seen in exported AAA / UltraSuite / TaL metadata.
constexpr std::array<Alias, 9> kAliases{{
    {"FrameRate", kFramesPerSec},
    {"FPS", kFramesPerSec},
    {"ScanLines", kNumVectors},
    {"EchoReturns", kPixPerVector},
    {"PixelsPerVector", kPixPerVector},
    {"FOV", kFieldOfView},
    {"HardwareOffsetMs", kSyncOffsetMs},
    {"SyncOffset", kSyncOffsetMs},
    {"TimeInSecsOfFirstFrame", kFirstFrameTime},
}};

std::string_view canonical_key(std::string_view key) {
  for (const auto& alias : kAliases) {
    if (alias.spelling == key) return alias.canonical;
  }
  return key;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

double parse_real(std::string_view value, std::size_t line, std::string_view key) {
  double out = 0.0;
  const char* first = value.data();
  if (!value.empty() && value.front() == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size() || !std::isfinite(out)) {
    throw FormatError("line " + std::to_string(line) + ": cannot parse " + std::string(key) + " value '" +
                      std::string(value) + "'");
  }
  return out;
}

std::size_t parse_count(std::string_view value, std::size_t line, std::string_view key) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size()) {
    throw FormatError("line " + std::to_string(line) + ": cannot parse " + std::string(key) + " value '" +
                      std::string(value) + "'");
  }
  return out;
}

std::string format_real(double value) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), ptr);
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::uint16_t get_u16(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint16_t>(b[at] | (b[at + 1] << 8));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) | (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

std::filesystem::path member(const std::filesystem::path& dir, const std::string& id, const char* ext) {
  return dir / (id + ext);
}

}  // namespace

std::string_view to_string(UtteranceType type) {
  switch (type) {
    case UtteranceType::kWords: return "A";
    case UtteranceType::kNonWords: return "B";
    case UtteranceType::kSentence: return "C";
    case UtteranceType::kArticulatory: return "D";
    case UtteranceType::kNonSpeech: return "E";
    case UtteranceType::kConversation: return "F";
    case UtteranceType::kRead: return "read";
    case UtteranceType::kSpontaneous: return "spontaneous";
  }
  return "read";
}

std::string_view to_string(ProbeView view) {
  return view == ProbeView::kCoronal ? "coronal" : "midsagittal";
}

UtteranceType parse_utterance_type(std::string_view text) {
  static constexpr std::array<UtteranceType, 8> kAll{
      UtteranceType::kWords,     UtteranceType::kNonWords,     UtteranceType::kSentence, UtteranceType::kArticulatory,
      UtteranceType::kNonSpeech, UtteranceType::kConversation, UtteranceType::kRead,     UtteranceType::kSpontaneous};
  for (auto t : kAll) {
    if (to_string(t) == text) return t;
  }
  throw FormatError("unknown utterance type '" + std::string(text) + "'");
}

ProbeView parse_probe_view(std::string_view text) {
  if (text == "midsagittal") return ProbeView::kMidsagittal;
  if (text == "coronal") return ProbeView::kCoronal;
  throw FormatError("unknown probe view '" + std::string(text) + "'");
}

void UltrasoundParams::validate() const {
  if (!(frame_rate > 0.0) || !std::isfinite(frame_rate)) throw ValidationError("frame rate must be positive");
  if (scan_lines < 1) throw ValidationError("scan line count must be at least 1");
  if (echo_returns < 1) throw ValidationError("echo return count must be at least 1");
  if (!(field_of_view > 0.0 && field_of_view <= 180.0)) {
    throw ValidationError("field of view must lie in (0, 180] degrees");
  }
  if (!std::isfinite(hardware_offset_ms)) throw ValidationError("hardware offset must be finite");
}

void UtteranceRecord::validate() const {
  validate_utterance_id(id);
  if (!(audio.sample_rate > 0.0)) throw ValidationError("utterance " + id + ": audio sample rate must be positive");
  ultrasound.params.validate();
  for (const auto& frame : ultrasound.frames) {
    if (frame.rows != ultrasound.params.scan_lines || frame.cols != ultrasound.params.echo_returns) {
      throw ValidationError("utterance " + id + ": frame dimensions disagree with params");
    }
  }
  if (prompt.find('\n') != std::string::npos) throw ValidationError("prompt must be a single line");
  if (recorded_at && recorded_at->find('\n') != std::string::npos) {
    throw ValidationError("timestamp must be a single line");
  }
}

// --- .param -----------------------------------------------------------------

UltrasoundParams parse_param(std::string_view text) {
  UltrasoundParams params;
  bool have_fps = false, have_lines = false, have_echo = false, have_fov = false, have_offset = false;
  std::vector<std::string> seen;

  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    line = trim(line);
    if (line.empty()) continue;

    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw FormatError("line " + std::to_string(line_no) + ": expected Key=Value");
    }
    const std::string_view raw_key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    const std::string_view key = canonical_key(raw_key);
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) {
      throw FormatError("line " + std::to_string(line_no) + ": duplicate key " + std::string(key));
    }
    seen.emplace_back(key);

    if (key == kFramesPerSec) {
      params.frame_rate = parse_real(value, line_no, key);
      have_fps = true;
    } else if (key == kNumVectors) {
      params.scan_lines = parse_count(value, line_no, key);
      have_lines = true;
    } else if (key == kPixPerVector) {
      params.echo_returns = parse_count(value, line_no, key);
      have_echo = true;
    } else if (key == kFieldOfView) {
      params.field_of_view = parse_real(value, line_no, key);
      have_fov = true;
    } else if (key == kSyncOffsetMs) {
      params.hardware_offset_ms = parse_real(value, line_no, key);
      have_offset = true;
    } else if (key == kFirstFrameTime) {
      params.first_frame_time = parse_real(value, line_no, key);
    } else {
      params.extra.emplace_back(std::string(raw_key), std::string(value));
    }
  }

  if (!have_fps) throw FormatError(std::string(kFramesPerSec) + " missing");
  if (!have_lines) throw FormatError(std::string(kNumVectors) + " missing");
  if (!have_echo) throw FormatError(std::string(kPixPerVector) + " missing");
  if (!have_fov) throw FormatError(std::string(kFieldOfView) + " missing");
  if (!have_offset) throw FormatError(std::string(kSyncOffsetMs) + " missing");
  params.validate();
  return params;
}

std::string write_param(const UltrasoundParams& params) {
  std::string out;
  out += std::string(kFramesPerSec) + "=" + format_real(params.frame_rate) + "\n";
  out += std::string(kNumVectors) + "=" + std::to_string(params.scan_lines) + "\n";
  out += std::string(kPixPerVector) + "=" + std::to_string(params.echo_returns) + "\n";
  out += std::string(kFieldOfView) + "=" + format_real(params.field_of_view) + "\n";
  out += std::string(kSyncOffsetMs) + "=" + format_real(params.hardware_offset_ms) + "\n";
  if (params.first_frame_time) {
    out += std::string(kFirstFrameTime) + "=" + format_real(*params.first_frame_time) + "\n";
  }
  for (const auto& [key, value] : params.extra) out += key + "=" + value + "\n";
  return out;
}

// --- .ult -------------------------------------------------------------------

RawUltrasoundSequence parse_ult(std::span<const std::uint8_t> bytes, const UltrasoundParams& params) {
  params.validate();
  const std::size_t frame_size = params.frame_size();
  const std::size_t remainder = bytes.size() % frame_size;
  if (remainder != 0) {
    throw TruncationError(".ult length " + std::to_string(bytes.size()) + " is not a multiple of the frame size " +
                              std::to_string(frame_size) + " (remainder " + std::to_string(remainder) + ")",
                          remainder);
  }
  const std::size_t count = bytes.size() / frame_size;
  if (count == 0) throw EmptyDataError(".ult contains no frames");

  RawUltrasoundSequence seq;
  seq.params = params;
  seq.frames.reserve(count);
  for (std::size_t f = 0; f < count; ++f) {
    Frame frame(params.scan_lines, params.echo_returns);
    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(f * frame_size), frame_size, frame.data.begin());
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

std::vector<std::uint8_t> write_ult(const RawUltrasoundSequence& seq) {
  std::vector<std::uint8_t> out;
  out.reserve(seq.frames.size() * seq.params.frame_size());
  for (const auto& frame : seq.frames) {
    if (frame.rows != seq.params.scan_lines || frame.cols != seq.params.echo_returns) {
      throw ShapeError("frame dimensions disagree with params");
    }
    out.insert(out.end(), frame.data.begin(), frame.data.end());
  }
  return out;
}

// --- .wav -------------------------------------------------------------------

std::int16_t quantise_sample(float x) {
  const double scaled = std::nearbyint(static_cast<double>(x) * 32768.0);
  return static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
}

AudioSignal parse_wav(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::string_view(reinterpret_cast<const char*>(bytes.data()), 4) != "RIFF" ||
      std::string_view(reinterpret_cast<const char*>(bytes.data()) + 8, 4) != "WAVE") {
    throw FormatError("not a RIFF/WAVE file");
  }
  std::optional<std::uint32_t> sample_rate;
  std::optional<std::span<const std::uint8_t>> data;
  std::size_t at = 12;
  while (at + 8 <= bytes.size()) {
    const std::string_view id(reinterpret_cast<const char*>(bytes.data()) + at, 4);
    const std::uint32_t size = get_u32(bytes, at + 4);
    const std::size_t body = at + 8;
    if (body + size > bytes.size()) throw FormatError("wav chunk '" + std::string(id) + "' runs past end of file");
    if (id == "fmt ") {
      if (size < 16) throw FormatError("wav fmt chunk too short");
      const auto format = get_u16(bytes, body);
      const auto channels = get_u16(bytes, body + 2);
      const auto bits = get_u16(bytes, body + 14);
      if (format != 1 || bits != 16) throw FormatError("wav must be 16-bit PCM");
      if (channels != 1) throw FormatError("wav must be mono");
      sample_rate = get_u32(bytes, body + 4);
    } else if (id == "data") {
      data = bytes.subspan(body, size);
    }
    at = body + size + (size & 1u);
  }
  if (!sample_rate) throw FormatError("wav has no fmt chunk");
  if (!data) throw FormatError("wav has no data chunk");
  if (data->size() % 2 != 0) throw FormatError("wav data chunk has odd length");

  AudioSignal audio;
  audio.sample_rate = *sample_rate;
  audio.samples.resize(data->size() / 2);
  for (std::size_t i = 0; i < audio.samples.size(); ++i) {
    const auto code = static_cast<std::int16_t>(get_u16(*data, 2 * i));
    audio.samples[i] = static_cast<float>(code) / 32768.0f;
  }
  return audio;
}

std::vector<std::uint8_t> write_wav(const AudioSignal& audio) {
  const double rate = audio.sample_rate;
  if (!(rate > 0.0) || rate != std::floor(rate) || rate > 4294967295.0) {
    throw ValidationError("wav sample rate must be a positive integer");
  }
  const auto data_bytes = static_cast<std::uint32_t>(audio.samples.size() * 2);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(rate));
  put_u32(out, static_cast<std::uint32_t>(rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_bytes);
  for (float x : audio.samples) put_u16(out, static_cast<std::uint16_t>(quantise_sample(x)));
  return out;
}

// --- file sets --------------------------------------------------------------

void validate_utterance_id(std::string_view id) {
  if (id.empty()) throw ValidationError("utterance id must be non-empty");
  if (id.find_first_of("/\\") != std::string_view::npos || id.find('\0') != std::string_view::npos) {
    throw ValidationError("utterance id '" + std::string(id) + "' contains a path separator");
  }
  if (id == "." || id == "..") throw ValidationError("utterance id '" + std::string(id) + "' is reserved");
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for " + path.string());
  return bytes;
}

std::string read_file_text(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_file_text(const std::filesystem::path& path, std::string_view text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void write_utterance(const UtteranceRecord& rec, const std::filesystem::path& directory) {
  rec.validate();
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) throw IoError("cannot create " + directory.string() + ": " + ec.message());

  UltrasoundParams params = rec.ultrasound.params;
  std::erase_if(params.extra, [](const auto& kv) { return kv.first == kUtteranceType || kv.first == kProbeView; });
  params.extra.emplace_back(std::string(kUtteranceType), std::string(to_string(rec.type)));
  params.extra.emplace_back(std::string(kProbeView), std::string(to_string(rec.probe_view)));

  std::string prompt_text = rec.prompt + "\n";
  if (rec.recorded_at) prompt_text += *rec.recorded_at + "\n";

  write_file_text(member(directory, rec.id, ".param"), write_param(params));
  write_file_bytes(member(directory, rec.id, ".ult"), write_ult(rec.ultrasound));
  write_file_bytes(member(directory, rec.id, ".wav"), write_wav(rec.audio));
  write_file_text(member(directory, rec.id, ".txt"), prompt_text);
}

UtteranceRecord read_utterance(const std::filesystem::path& directory, const std::string& id) {
  validate_utterance_id(id);
  UtteranceRecord rec;
  rec.id = id;

  UltrasoundParams params = parse_param(read_file_text(member(directory, id, ".param")));
  bool have_type = false;
  for (auto it = params.extra.begin(); it != params.extra.end();) {
    if (it->first == kUtteranceType) {
      rec.type = parse_utterance_type(it->second);
      have_type = true;
      it = params.extra.erase(it);
    } else if (it->first == kProbeView) {
      rec.probe_view = parse_probe_view(it->second);
      it = params.extra.erase(it);
    } else {
      ++it;
    }
  }
  // Corpora name files like "001A"; fall back to the suffix letter.
  if (!have_type) {
    const char last = id.back();
    rec.type = (last >= 'A' && last <= 'F') ? parse_utterance_type(std::string_view(&last, 1)) : UtteranceType::kRead;
  }

  rec.ultrasound = parse_ult(read_file_bytes(member(directory, id, ".ult")), params);
  rec.audio = parse_wav(read_file_bytes(member(directory, id, ".wav")));

  const std::string text = read_file_text(member(directory, id, ".txt"));
  std::istringstream lines(text);
  std::string line;
  if (std::getline(lines, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    rec.prompt = line;
  }
  if (std::getline(lines, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) rec.recorded_at = line;
  }
  return rec;
}

std::vector<std::string> list_utterances(const std::filesystem::path& directory) {
  std::error_code ec;
  std::filesystem::directory_iterator it(directory, ec);
  if (ec) throw IoError("cannot list " + directory.string() + ": " + ec.message());
  std::vector<std::string> ids;
  for (const auto& entry : it) {
    if (!entry.is_regular_file() || entry.path().extension() != ".param") continue;
    const std::string id = entry.path().stem().string();
    if (std::filesystem::exists(member(directory, id, ".ult")) &&
        std::filesystem::exists(member(directory, id, ".wav")) &&
        std::filesystem::exists(member(directory, id, ".txt"))) {
      ids.push_back(id);
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

// --- fan rendering ------------------------------------------------------------

FanLayout fan_layout(const UltrasoundParams& params, std::size_t out_height, std::size_t out_width,
                     const FanGeometry& geometry) {
  if (out_height < 2 || out_width < 2) throw ShapeError("fan output must be at least 2x2");
  if (!(geometry.inner_radius >= 0.0 && geometry.inner_radius < 1.0)) {
    throw ValidationError("fan inner radius must lie in [0, 1)");
  }
  params.validate();
  FanLayout layout;
  layout.half_angle = params.field_of_view * std::numbers::pi / 360.0;
  layout.inner_radius = geometry.inner_radius;
  const double world_w = 2.0 * std::sin(layout.half_angle);
  const double world_h = 1.0 - geometry.inner_radius * std::cos(layout.half_angle);
  layout.pixels_per_unit =
      std::min(static_cast<double>(out_width) / world_w, static_cast<double>(out_height) / world_h);
  const double top = (static_cast<double>(out_height) - layout.pixels_per_unit * world_h) / 2.0;
  layout.apex_x = static_cast<double>(out_width) / 2.0;
  layout.apex_y = top + layout.pixels_per_unit;
  return layout;
}

namespace {

void render_fan_row(const Frame& frame, const UltrasoundParams& params, const FanLayout& layout,
                    const FanGeometry& geometry, std::size_t row, FanImage& out) {
  const std::size_t width = out.pixels.cols;
  const std::size_t height = out.pixels.rows;
  const double lines = static_cast<double>(params.scan_lines - 1);
  const double echoes = static_cast<double>(params.echo_returns - 1);
  const std::size_t src_row = geometry.flip_vertical ? height - 1 - row : row;
  const double wy = (layout.apex_y - (static_cast<double>(src_row) + 0.5)) / layout.pixels_per_unit;

  for (std::size_t col = 0; col < width; ++col) {
    double wx = (static_cast<double>(col) + 0.5 - layout.apex_x) / layout.pixels_per_unit;
    if (geometry.flip_horizontal) wx = -wx;
    const double r = std::hypot(wx, wy);
    const double theta = std::atan2(wx, wy);
    const double fi = (theta + layout.half_angle) / (2.0 * layout.half_angle) * lines;
    const double fj = (r - layout.inner_radius) / (1.0 - layout.inner_radius) * echoes;
    if (!(fi >= 0.0 && fi <= lines && fj >= 0.0 && fj <= echoes)) {
      out.pixels(row, col) = 0;
      out.mask(row, col) = 0;
      continue;
    }
    const auto i0 = static_cast<std::size_t>(fi);
    const auto j0 = static_cast<std::size_t>(fj);
    const std::size_t i1 = std::min(i0 + 1, params.scan_lines - 1);
    const std::size_t j1 = std::min(j0 + 1, params.echo_returns - 1);
    const double a = fi - static_cast<double>(i0);
    const double b = fj - static_cast<double>(j0);
    const double v = (1.0 - a) * (1.0 - b) * frame(i0, j0) + (1.0 - a) * b * frame(i0, j1) +
                     a * (1.0 - b) * frame(i1, j0) + a * b * frame(i1, j1);
    out.pixels(row, col) = static_cast<std::uint8_t>(std::clamp(std::nearbyint(v), 0.0, 255.0));
    out.mask(row, col) = 1;
  }
}

void check_fan_inputs(const Frame& frame, const UltrasoundParams& params) {
  if (frame.rows != params.scan_lines || frame.cols != params.echo_returns) {
    throw ShapeError("frame is " + std::to_string(frame.rows) + "x" + std::to_string(frame.cols) +
                     " but params declare " + std::to_string(params.scan_lines) + "x" +
                     std::to_string(params.echo_returns));
  }
  if (params.scan_lines < 2 || params.echo_returns < 2) {
    throw ShapeError("fan rendering needs at least 2 scan lines and 2 echo returns");
  }
}

}  // namespace

FanImage fan_transform(const Frame& frame, const UltrasoundParams& params, std::size_t out_height,
                       std::size_t out_width, const FanGeometry& geometry) {
  check_fan_inputs(frame, params);
  const FanLayout layout = fan_layout(params, out_height, out_width, geometry);
  FanImage out{Matrix<std::uint8_t>(out_height, out_width), Matrix<std::uint8_t>(out_height, out_width)};
  const auto rows = static_cast<std::ptrdiff_t>(out_height);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t row = 0; row < rows; ++row) {
    render_fan_row(frame, params, layout, geometry, static_cast<std::size_t>(row), out);
  }
  return out;
}

namespace serial {

FanImage fan_transform(const Frame& frame, const UltrasoundParams& params, std::size_t out_height,
                       std::size_t out_width, const FanGeometry& geometry) {
  check_fan_inputs(frame, params);
  const FanLayout layout = fan_layout(params, out_height, out_width, geometry);
  FanImage out{Matrix<std::uint8_t>(out_height, out_width), Matrix<std::uint8_t>(out_height, out_width)};
  for (std::size_t row = 0; row < out_height; ++row) render_fan_row(frame, params, layout, geometry, row, out);
  return out;
}

}  // namespace serial
}  // namespace tonguesync
