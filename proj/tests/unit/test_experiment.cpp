#include <algorithm>
#include <filesystem>
#include <map>
#include <set>

#include "doctest.h"
#include "httplib.h"
#include "json.hpp"
#include "synthetic.hpp"
#include "tonguesync/error.hpp"
#include "tonguesync/experiment/design.hpp"
#include "tonguesync/experiment/media.hpp"
#include "tonguesync/experiment/results.hpp"
#include "tonguesync/experiment/server.hpp"
#include "tonguesync/experiment/session.hpp"
#include "tonguesync/rng.hpp"

using namespace tonguesync;
using namespace tonguesync::experiment;
namespace fs = std::filesystem;

namespace {

std::vector<PoolEntry> pool(std::size_t n) {
  std::vector<PoolEntry> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({"utt" + std::to_string(i), i % 2 ? "read" : "words", 10.0 * (i % 7)});
  return out;
}

ThresholdPlan small_plan() {
  ThresholdPlan plan;
  plan.errors_ms = {-185, 0, 90};
  plan.quotas = {5, 5, 5};
  plan.participants = 2;
  plan.per_participant = 9;
  plan.shared_per_pair = 3;
  plan.seed = 3;
  return plan;
}

fs::path log_file(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tonguesync-unit-" + name + ".jsonl");
  fs::remove(p);
  return p;
}

void play_both(ExperimentStore& store, const std::string& token) {
  const std::string id = store.session(token).current();
  store.record_play(token, id, Side::kA, 1.0);
  store.record_play(token, id, Side::kB, 0.5);
}

}  // namespace

TEST_CASE("threshold builder capacity and quota errors") {
  try {
    build_threshold_experiment(pool(10), ThresholdPlan{});
    FAIL("expected CapacityError");
  } catch (const CapacityError& e) {
    CHECK(std::string(e.what()).find("-305") != std::string::npos);
  }
  ThresholdPlan uneven = small_plan();
  uneven.quotas = {6, 5, 4};
  CHECK_THROWS_AS(build_threshold_experiment(pool(40), uneven), ValidationError);
}

TEST_CASE("threshold builder sides, uniqueness and serialisation") {
  ThresholdPlan plan;
  plan.seed = 12;
  const Experiment e = build_threshold_experiment(pool(520), plan);
  std::size_t a_correct = 0, sided = 0;
  for (const auto& s : e.stimuli) {
    if (s.correct_side == Side::kNone) {
      CHECK(s.error_ms == 0.0);
      CHECK(s.side_a_offset_ms == s.side_b_offset_ms);
      continue;
    }
    ++sided;
    a_correct += s.correct_side == Side::kA;
    const double wrong = s.offset(s.correct_side == Side::kA ? Side::kB : Side::kA);
    CHECK(wrong - s.offset(s.correct_side) == doctest::Approx(s.error_ms));
  }
  const double share = static_cast<double>(a_correct) / sided;
  CHECK(share >= 0.4);
  CHECK(share <= 0.6);

  for (const auto& session : e.sessions) {
    std::set<std::string> utts;
    std::map<double, int> per_error;
    for (const auto& id : session.stimulus_ids) {
      CHECK(utts.insert(e.stimulus(id).utterance_id).second);
      ++per_error[e.stimulus(id).error_ms];
    }
    CHECK(session.stimulus_ids.size() == 60);
    CHECK(per_error[-305] == 6);
    CHECK(per_error[-95] == 3);
  }

  CHECK(experiment_from_json(experiment_to_json(e)) == e);
  CHECK(experiment_to_json(experiment_from_json(experiment_to_json(e))) == experiment_to_json(e));
  CHECK_THROWS_AS(e.session_by_token("nope"), NotFoundError);
}

TEST_CASE("preference builder exclusion and controls") {
  PreferencePlan plan;
  CHECK(excluded_from_preference({"u", "read", 130, 100}, plan));
  CHECK(excluded_from_preference({"u", "read", 0, 124}, plan));
  CHECK_FALSE(excluded_from_preference({"u", "read", 145, 100}, plan));
  CHECK_FALSE(excluded_from_preference({"u", "read", -25, 100}, plan));

  std::vector<PreferenceCandidate> inside{{"c1", "read", 130, 100}, {"c2", "read", 10, 0}};
  CHECK_THROWS_AS(build_preference_experiment(inside, pool(20), plan), CapacityError);

  std::vector<PreferenceCandidate> cands;
  for (int i = 0; i < 320; ++i) cands.push_back({"c" + std::to_string(i), "read", i % 2 ? 200.0 : -200.0, 0.0});
  plan.seed = 4;
  const Experiment e = build_preference_experiment(cands, pool(30), plan);
  std::set<std::string> controls0;
  for (const auto& id : e.sessions[0].stimulus_ids) {
    if (e.stimulus(id).provenance == Provenance::kControl) controls0.insert(id);
  }
  CHECK(controls0.size() == 10);
  for (const auto& s : e.sessions) {
    std::set<std::string> c;
    for (const auto& id : s.stimulus_ids) {
      const StimulusPair& p = e.stimulus(id);
      if (p.provenance == Provenance::kControl) {
        c.insert(id);
        CHECK(p.correct_side != Side::kNone);
      } else {
        REQUIRE(p.model_side.has_value());
        CHECK(p.offset(*p.model_side) == doctest::Approx(p.error_ms + p.offset(*p.model_side == Side::kA ? Side::kB : Side::kA)));
      }
    }
    CHECK(c == controls0);
    CHECK(s.stimulus_ids.size() == 60);
  }
  // Control utterances are not reused from the candidates.
  for (const auto& id : controls0) CHECK(e.stimulus(id).utterance_id.rfind("utt", 0) == 0);
}

TEST_CASE("session rule order") {
  const Experiment e = build_threshold_experiment(pool(40), small_plan());
  SessionState s = initial_state(e.sessions[0]);
  const std::string id = s.current();
  const std::string other = e.sessions[0].stimulus_ids[1];
  CHECK_THROWS_AS(check_play(s, id, Side::kA, 2.0), ValidationError);
  CHECK_THROWS_AS(check_play(s, other, Side::kA, 1.0), SequenceError);
  CHECK_THROWS_AS(check_judgment(s, ExperimentKind::kThreshold, id, Choice::kA), PreconditionError);
  for (std::size_t i = 0; i < kMaxPlaysPerSide; ++i) {
    check_play(s, id, Side::kB, 0.25);
    apply_play(s, {id, Side::kB, 0.25, 0});
  }
  CHECK_THROWS_AS(check_play(s, id, Side::kB, 1.0), LimitError);
  CHECK_THROWS_AS(check_judgment(s, ExperimentKind::kThreshold, id, Choice::kA), PreconditionError);
  apply_play(s, {id, Side::kA, 1.0, 0});
  CHECK_THROWS_AS(check_judgment(s, ExperimentKind::kPreference, id, Choice::kC), ValidationError);
  CHECK_NOTHROW(check_judgment(s, ExperimentKind::kThreshold, id, Choice::kC));
  apply_judgment(s, {id, Choice::kC, 0});
  CHECK(s.cursor == 1);
  CHECK_THROWS_AS(check_judgment(s, ExperimentKind::kThreshold, id, Choice::kA), ConflictError);
  CHECK(valid_speed(0.5));
  CHECK_FALSE(valid_speed(0.75));
}

TEST_CASE("store persists and replays judgments") {
  const Experiment e = build_threshold_experiment(pool(40), small_plan());
  const fs::path path = log_file("store");
  std::int64_t now = 1000;
  {
    ExperimentStore store(e, path, [&] { return now++; });
    const std::string token = e.sessions[1].token;
    play_both(store, token);
    const std::string id = store.session(token).current();
    const auto rec = store.record_judgment(token, id, Choice::kB);
    CHECK(rec.correct_side == e.stimulus(id).correct_side);
    CHECK(rec.error_ms == e.stimulus(id).error_ms);
    CHECK_THROWS_AS(store.record_judgment(token, id, Choice::kB), ConflictError);
    CHECK_THROWS_AS(store.session("bad-token"), NotFoundError);
    CHECK(store.event_count() == 3);
  }
  ExperimentStore reopened(e, path);
  const SessionState s = reopened.session(e.sessions[1].token);
  CHECK(s.cursor == 1);
  CHECK(s.plays.size() == 2);
  CHECK(s.plays[0].timestamp_ms == 1000);
  CHECK(reopened.judgments().size() == 1);
  CHECK_FALSE(reopened.all_complete());
  fs::remove(path);
}

TEST_CASE("results for an all-correct threshold run") {
  const Experiment e = build_threshold_experiment(pool(40), small_plan());
  const fs::path path = log_file("allcorrect");
  ExperimentStore store(e, path);
  CHECK_THROWS_AS(experiment_results(e, store.judgments()), EmptyDataError);
  for (const auto& session : e.sessions) {
    while (!store.session(session.token).completed()) {
      const std::string id = store.session(session.token).current();
      play_both(store, session.token);
      const Side side = e.stimulus(id).correct_side;
      store.record_judgment(session.token, id, side == Side::kA ? Choice::kA : side == Side::kB ? Choice::kB : Choice::kC);
      if (!store.all_complete()) CHECK_THROWS_AS(experiment_results(e, store.judgments()), PreconditionError);
    }
  }
  const auto r = experiment_results(e, store.judgments());
  CHECK(r["partial"] == false);
  CHECK(r["overall"][0]["rate"] == 1.0);
  CHECK(r["overall"][0]["ci_high"] == 1.0);
  for (const auto& row : r["by_error"]) CHECK(row["rate"] == 1.0);
  for (const auto& row : r["agreement_by_pair"]) CHECK(row["truth"] == 1.0);
  fs::remove(path);
}

TEST_CASE("preference results for 238 of 300") {
  std::vector<PreferenceCandidate> cands;
  for (int i = 0; i < 320; ++i) cands.push_back({"c" + std::to_string(i), "read", 300.0, 0.0});
  PreferencePlan plan;
  plan.seed = 8;
  const Experiment e = build_preference_experiment(cands, pool(30), plan);
  std::vector<stats::JudgmentRecord> judgments;
  int prefer = 0;
  for (const auto& s : e.sessions) {
    for (const auto& id : s.stimulus_ids) {
      const StimulusPair& p = e.stimulus(id);
      stats::JudgmentRecord r;
      r.participant_id = s.participant_id;
      r.stimulus_id = id;
      r.kind = ExperimentKind::kPreference;
      r.correct_side = p.correct_side;
      r.error_ms = p.error_ms;
      if (p.provenance == Provenance::kControl) {
        r.choice = p.correct_side == Side::kA ? Choice::kA : Choice::kB;
      } else {
        const bool model = prefer++ < 238;
        r.choice = (*p.model_side == Side::kA) == model ? Choice::kA : Choice::kB;
      }
      judgments.push_back(r);
    }
  }
  const auto r = experiment_results(e, judgments);
  CHECK(r["preference"]["n"] == 300);
  CHECK(r["preference"]["count"] == 238);
  CHECK(r["preference"]["rate"].get<double>() == doctest::Approx(0.793).epsilon(0.001));
  CHECK(r["preference"]["ci_low"].get<double>() == doctest::Approx(0.748).epsilon(0.001));
  CHECK(r["preference"]["ci_high"].get<double>() == doctest::Approx(0.839).epsilon(0.001));
  const double p = r["preference"]["p_value"].get<double>();
  CHECK(p > 0.9e-25);
  CHECK(p < 3.6e-25);
  CHECK(r["control"]["rate"] == 1.0);
}

TEST_CASE("media rendering") {
  const Matrix<std::uint8_t> img(3, 5, 9);
  const auto png = encode_png(img);
  REQUIRE(png.size() > 8);
  CHECK(png[1] == 'P');
  CHECK(png[2] == 'N');
  testing::SyntheticSpec spec;
  spec.duration_s = 1.0;
  const UtteranceRecord rec = testing::make_synthetic(spec);
  MediaOptions opt;
  opt.height = 40;
  opt.width = 60;
  const RenderedSide a = render_side(rec, 0, opt), b = render_side(rec, 250, opt);
  CHECK(a.frames_png.size() == 24);
  CHECK(b.frames_png.size() == 18);
  CHECK(parse_wav(a.wav).samples.size() == 8000);
  CHECK(b.duration_s == doctest::Approx(0.75).epsilon(0.03));
}

TEST_CASE("http status mapping") {
  CHECK(http_status(ErrorKind::kValidation) == 400);
  CHECK(http_status(ErrorKind::kNotFound) == 404);
  CHECK(http_status(ErrorKind::kConflict) == 409);
  CHECK(http_status(ErrorKind::kSequence) == 409);
  CHECK(http_status(ErrorKind::kPrecondition) == 412);
  CHECK(http_status(ErrorKind::kLimit) == 429);
  CHECK(http_status(ErrorKind::kIo) == 500);
}

TEST_CASE("live experiment server") {
  const Experiment e = build_threshold_experiment(pool(40), small_plan());
  const fs::path path = log_file("server");
  ExperimentStore store(e, path);
  const UtteranceLoader loader = [](const std::string& id) {
    testing::SyntheticSpec spec;
    spec.id = id;
    spec.duration_s = 1.0;
    return testing::make_synthetic(spec);
  };
  MediaOptions media;
  media.height = 30;
  media.width = 40;
  ExperimentServer server(store, loader, media);
  const int port = server.start();
  httplib::Client http("127.0.0.1", port);
  const std::string token = e.sessions[0].token;
  const std::string base = "/session/" + token;
  auto post = [&](const std::string& route, const nlohmann::json& body) {
    return http.Post(base + route, body.dump(), "application/json");
  };
  auto no_truth = [](const std::string& body) {
    for (const char* word : {"correct", "offset", "provenance", "error_ms", "utterance"}) {
      CHECK(body.find(word) == std::string::npos);
    }
  };

  auto state = http.Get(base);
  REQUIRE(state);
  CHECK(state->status == 200);
  no_truth(state->body);
  CHECK(http.Get("/session/unknown")->status == 404);

  auto next = http.Get(base + "/next");
  REQUIRE(next);
  no_truth(next->body);
  const auto nj = nlohmann::json::parse(next->body);
  const std::string id = nj["stimulus_id"];
  CHECK(nj["sides"]["A"]["manifest"] == "/media/" + id + "/A/manifest");

  CHECK(post("/judgment", {{"stimulus_id", id}, {"choice", "A"}})->status == 412);
  CHECK(post("/play", {{"stimulus_id", id}, {"side", "A"}, {"speed", 2.0}})->status == 400);
  CHECK(post("/play", {{"stimulus_id", e.sessions[0].stimulus_ids[1]}, {"side", "A"}, {"speed", 1.0}})->status == 409);
  CHECK(http.Post(base + "/play", "{not json", "application/json")->status == 400);
  for (int i = 0; i < 6; ++i) {
    auto r = post("/play", {{"stimulus_id", id}, {"side", "A"}, {"speed", 0.5}});
    CHECK(r->status == 200);
    no_truth(r->body);
  }
  CHECK(post("/play", {{"stimulus_id", id}, {"side", "A"}, {"speed", 0.5}})->status == 429);
  CHECK(post("/play", {{"stimulus_id", id}, {"side", "B"}, {"speed", 1.0}})->status == 200);
  auto judged = post("/judgment", {{"stimulus_id", id}, {"choice", "C"}});
  CHECK(judged->status == 200);
  no_truth(judged->body);
  CHECK(nlohmann::json::parse(judged->body)["cursor"] == 1);
  CHECK(post("/judgment", {{"stimulus_id", id}, {"choice", "C"}})->status == 409);

  auto manifest = http.Get("/media/" + id + "/B/manifest");
  REQUIRE(manifest);
  CHECK(manifest->status == 200);
  no_truth(manifest->body);
  const auto mj = nlohmann::json::parse(manifest->body);
  CHECK(mj["width"] == 40);
  CHECK(mj["height"] == 30);
  const int frames = mj["frame_count"];
  CHECK(frames > 0);
  auto frame = http.Get("/media/" + id + "/B/frames/0");
  CHECK(frame->status == 200);
  CHECK(frame->get_header_value("Content-Type") == "image/png");
  CHECK(frame->body.substr(1, 3) == "PNG");
  CHECK(http.Get("/media/" + id + "/B/frames/" + std::to_string(frames))->status == 404);
  auto audio = http.Get("/media/" + id + "/A/audio");
  CHECK(audio->status == 200);
  CHECK(audio->body.substr(0, 4) == "RIFF");
  CHECK(http.Get("/media/" + id + "/Q/audio")->status == 400);

  const std::string results = "/experiment/" + e.experiment_id + "/results";
  CHECK(http.Get(results)->status == 412);
  auto partial = http.Get(results + "?partial=1");
  REQUIRE(partial);
  CHECK(partial->status == 200);
  const auto rj = nlohmann::json::parse(partial->body);
  CHECK(rj["partial"] == true);
  CHECK(rj["judgments"] == 1);
  CHECK(http.Get("/experiment/other/results")->status == 404);
  CHECK(http.Get("/no/such/route")->status == 404);

  server.stop();
  fs::remove(path);
}
