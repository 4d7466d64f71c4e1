#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "synthetic.hpp"
#include "tonguesync/cli.hpp"
#include "tonguesync/nn/checkpoint.hpp"

using namespace tonguesync;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("tonguesync-unit-cli-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const char* kConfig =
    "audio_rate = 8000\n"
    "frame_height = 16\n"
    "frame_width = 24\n";

// Two preprocessed utterances and a small untrained model.
fs::path sync_fixture() {
  const fs::path dir = scratch("sync");
  for (int i = 0; i < 2; ++i) {
    testing::SyntheticSpec spec;
    spec.id = "utt" + std::to_string(i);
    spec.duration_s = 3.0;
    spec.audio_rate = 8000;
    spec.offset_ms = 45.0 * i;
    spec.seed = 40 + i;
    write_utterance(testing::make_synthetic(spec), dir / "data");
  }
  nn::TwoStreamModel<float> model(testing::small_model_config(5, 16, 24, 20, 30), 1);
  nn::save_model(model, dir / "model.bin");
  write_file_text(dir / "pipeline.conf", kConfig);
  return dir;
}

}  // namespace

TEST_CASE("config parsing") {
  cli::PipelineConfig cfg;
  CHECK(cfg.audio_rate == 22050);
  CHECK(cfg.frame_rate == 24);
  CHECK(cfg.frame_height == 63);
  CHECK(cfg.frame_width == 138);
  CHECK(cfg.frames_per_window == 5);
  CHECK(cfg.train.learning_rate == 0.001);
  cli::apply_config(cfg, "# comment\naudio_rate = 16000\n\ntrain.epochs = 3  # trailing\nseed = 9\n");
  CHECK(cfg.audio_rate == 16000);
  CHECK(cfg.train.epochs == 3);
  CHECK(cfg.seed == 9);
  cli::PipelineConfig again;
  cli::apply_config(again, cli::format_config(cfg));
  CHECK(cli::format_config(again) == cli::format_config(cfg));
  try {
    cli::apply_config(cfg, "audio_rate = 1\nno_such_key = 3\n");
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(cli::apply_config(cfg, "train.epochs = many"), ValidationError);
}

TEST_CASE("exit codes") {
  CHECK(cli::exit_code(ErrorKind::kValidation) == 2);
  CHECK(cli::exit_code(ErrorKind::kNumeric) == 4);
  CHECK(cli::exit_code(ErrorKind::kFormat) == 3);
  CHECK(cli::exit_code(ErrorKind::kIo) == 3);

  const Run help = run({"--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("sync") != std::string::npos);
  CHECK(help.err.empty());

  const Run unknown = run({"frobnicate"});
  CHECK(unknown.code == 1);
  CHECK_FALSE(unknown.err.empty());
  CHECK(run({"sync", "--bogus"}).code == 1);
}

TEST_CASE("sync rejects a reversed grid") {
  const fs::path dir = sync_fixture();
  const Run r = run({"--config", (dir / "pipeline.conf").string(), "sync", "--model", (dir / "model.bin").string(),
                     "--grid", "0.5:-0.5:0.045", "--in", (dir / "data").string(), "--out",
                     (dir / "p.jsonl").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("grid") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "p.jsonl"));
}

TEST_CASE("sync writes one line per utterance and will not clobber") {
  const fs::path dir = sync_fixture();
  const std::vector<std::string> args{"--config", (dir / "pipeline.conf").string(), "sync", "--model",
                                      (dir / "model.bin").string(), "--grid", "-1.75:0.75:0.045", "--in",
                                      (dir / "data").string(), "--out", (dir / "p.jsonl").string()};
  const Run r = run(args);
  REQUIRE(r.code == 0);
  const std::string text = read_file_text(dir / "p.jsonl");
  CHECK(std::count(text.begin(), text.end(), '\n') == 2);
  const auto preds = read_predictions(text);
  REQUIRE(preds.size() == 2);
  CHECK(preds[0].prediction.utterance_id == "utt0");
  CHECK(preds[1].context.hardware_offset_ms == 45.0);
  CHECK(preds[0].prediction.offsets_ms.size() == 56);

  const Run again = run(args);
  CHECK(again.code != 0);
  CHECK(read_file_text(dir / "p.jsonl") == text);
  std::vector<std::string> overwrite = args;
  overwrite.insert(overwrite.begin(), "--overwrite");
  CHECK(run(overwrite).code == 0);
  CHECK(read_file_text(dir / "p.jsonl") == text);

  const Run eval = run({"evaluate", "--predictions", (dir / "p.jsonl").string(), "--format", "jsonl"});
  CHECK(eval.code == 0);
  CHECK(eval.out.find("\"group\":\"All\"") != std::string::npos);
}

TEST_CASE("stats subcommands") {
  const Run w = run({"stats", "wald", "--p", "0.917", "--n", "60"});
  REQUIRE(w.code == 0);
  const auto j = nlohmann::json::parse(w.out);
  CHECK(j["low"].get<double>() == doctest::Approx(0.847).epsilon(0.001));
  CHECK(j["high"].get<double>() == doctest::Approx(0.987).epsilon(0.001));
  CHECK(run({"stats", "wald", "--p", "1.5", "--n", "60"}).code == 2);
  const Run b = run({"stats", "binomial", "--k", "238", "--n", "300"});
  REQUIRE(b.code == 0);
  const double p = nlohmann::json::parse(b.out)["p_value"];
  CHECK(p > 0.9e-25);
  CHECK(p < 3.6e-25);
}
