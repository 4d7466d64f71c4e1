#include "tonguesync/experiment/server.hpp"

#include <deque>
#include <map>
#include <mutex>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "tonguesync/error.hpp"
#include "tonguesync/experiment/results.hpp"

namespace tonguesync::experiment {

using nlohmann::ordered_json;

int http_status(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kValidation:
    case ErrorKind::kFormat:
    case ErrorKind::kRange:
    case ErrorKind::kShape:
      return 400;
    case ErrorKind::kNotFound:
    case ErrorKind::kEmptyData:
      return 404;
    case ErrorKind::kConflict:
    case ErrorKind::kSequence:
      return 409;
    case ErrorKind::kPrecondition:
      return 412;
    case ErrorKind::kLimit:
      return 429;
    default:
      return 500;
  }
}

namespace {

constexpr std::size_t kCacheEntries = 32;

std::string_view error_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kValidation: return "validation";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kRange: return "range";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kNotFound: return "not-found";
    case ErrorKind::kEmptyData: return "empty";
    case ErrorKind::kConflict: return "conflict";
    case ErrorKind::kSequence: return "sequence";
    case ErrorKind::kPrecondition: return "precondition";
    case ErrorKind::kLimit: return "limit";
    default: return "internal";
  }
}

void send_json(httplib::Response& res, const ordered_json& j, int status = 200) {
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

Side parse_play_side(const std::string& text) {
  if (text == "A") return Side::kA;
  if (text == "B") return Side::kB;
  throw ValidationError("side must be A or B");
}

nlohmann::json parse_body(const httplib::Request& req) {
  try {
    auto j = nlohmann::json::parse(req.body);
    if (!j.is_object()) throw ValidationError("request body must be a JSON object");
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed request body: ") + e.what());
  }
}

template <typename T>
T body_field(const nlohmann::json& j, const char* name) {
  try {
    return j.at(name).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(std::string("request body needs field '") + name + "'");
  }
}

ordered_json session_payload(const Experiment& e, const SessionState& s) {
  ordered_json j;
  j["participant_id"] = s.participant_id;
  j["kind"] = stats::to_string(e.kind);
  j["choices"] = e.kind == ExperimentKind::kThreshold ? std::vector<std::string>{"A", "B", "C"}
                                                      : std::vector<std::string>{"A", "B"};
  j["speeds"] = {1.0, 0.5, 0.25};
  j["max_plays_per_side"] = kMaxPlaysPerSide;
  j["total"] = s.stimulus_ids.size();
  j["cursor"] = s.cursor;
  j["completed"] = s.completed();
  if (s.completed()) {
    j["current"] = nullptr;
  } else {
    const std::string& id = s.current();
    j["current"] = {{"stimulus_id", id},
                    {"plays", {{"A", s.play_count(id, Side::kA)}, {"B", s.play_count(id, Side::kB)}}}};
  }
  return j;
}

std::string media_base(const std::string& stimulus, std::string_view side) {
  return "/media/" + stimulus + "/" + std::string(side);
}

}  // namespace

struct ExperimentServer::Impl {
  ExperimentStore& store;
  UtteranceLoader loader;
  MediaOptions media;
  httplib::Server http;
  std::thread thread;
  std::mutex cache_mutex;
  std::map<std::pair<std::string, Side>, std::shared_ptr<const RenderedSide>> cache;
  std::deque<std::pair<std::string, Side>> cache_order;

  Impl(ExperimentStore& s, UtteranceLoader l, MediaOptions m) : store(s), loader(std::move(l)), media(m) { routes(); }

  std::shared_ptr<const RenderedSide> rendered(const std::string& stimulus_id, Side side) {
    const auto key = std::make_pair(stimulus_id, side);
    {
      std::lock_guard lock(cache_mutex);
      if (auto it = cache.find(key); it != cache.end()) return it->second;
    }
    const StimulusPair& st = store.experiment().stimulus(stimulus_id);
    auto r = std::make_shared<const RenderedSide>(render_side(loader(st.utterance_id), st.offset(side), media));
    std::lock_guard lock(cache_mutex);
    if (cache.emplace(key, r).second) {
      cache_order.push_back(key);
      if (cache_order.size() > kCacheEntries) {
        cache.erase(cache_order.front());
        cache_order.pop_front();
      }
    }
    return r;
  }

  template <typename F>
  httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const Error& e) {
        send_json(res, {{"error", error_name(e.kind())}, {"message", e.what()}}, http_status(e.kind()));
      } catch (const std::exception& e) {
        send_json(res, {{"error", "internal"}, {"message", e.what()}}, 500);
      }
    };
  }

  void routes() {
    http.Get(R"(/session/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
               send_json(res, session_payload(store.experiment(), store.session(req.matches[1])));
             }));
    http.Get(R"(/session/([^/]+)/next)", guarded([this](const httplib::Request& req, httplib::Response& res) {
               const SessionState s = store.session(req.matches[1]);
               ordered_json j;
               j["completed"] = s.completed();
               j["total"] = s.stimulus_ids.size();
               j["index"] = s.cursor;
               if (!s.completed()) {
                 const std::string& id = s.current();
                 j["stimulus_id"] = id;
                 ordered_json sides;
                 for (std::string_view side : {"A", "B"}) {
                   const std::string base = media_base(id, side);
                   sides[std::string(side)] = {{"plays", s.play_count(id, side == "A" ? Side::kA : Side::kB)},
                                               {"manifest", base + "/manifest"},
                                               {"audio", base + "/audio"}};
                 }
                 j["sides"] = std::move(sides);
               }
               send_json(res, j);
             }));
    http.Post(R"(/session/([^/]+)/play)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                const auto body = parse_body(req);
                const std::string token = req.matches[1];
                store.record_play(token, body_field<std::string>(body, "stimulus_id"),
                                  parse_play_side(body_field<std::string>(body, "side")), body_field<double>(body, "speed"));
                send_json(res, session_payload(store.experiment(), store.session(token)));
              }));
    http.Post(R"(/session/([^/]+)/judgment)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                const auto body = parse_body(req);
                const std::string token = req.matches[1];
                const std::string choice = body_field<std::string>(body, "choice");
                if (choice != "A" && choice != "B" && choice != "C") throw ValidationError("choice must be A, B or C");
                store.record_judgment(token, body_field<std::string>(body, "stimulus_id"), stats::parse_choice(choice));
                send_json(res, session_payload(store.experiment(), store.session(token)));
              }));
    http.Get(R"(/media/([^/]+)/([^/]+)/manifest)", guarded([this](const httplib::Request& req, httplib::Response& res) {
               const std::string id = req.matches[1];
               const std::string side = req.matches[2];
               const auto r = rendered(id, parse_play_side(side));
               const std::string base = media_base(id, side);
               ordered_json j;
               j["stimulus_id"] = id;
               j["side"] = side;
               j["fps"] = r->fps;
               j["frame_count"] = r->frames_png.size();
               j["width"] = r->width;
               j["height"] = r->height;
               j["duration_s"] = r->duration_s;
               j["frame_url"] = base + "/frames/{n}";
               j["audio_url"] = base + "/audio";
               send_json(res, j);
             }));
    http.Get(R"(/media/([^/]+)/([^/]+)/frames/(\d+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
               const auto r = rendered(req.matches[1], parse_play_side(req.matches[2]));
               const std::size_t n = std::stoul(req.matches[3]);
               if (n >= r->frames_png.size()) throw NotFoundError("frame " + std::to_string(n) + " out of range");
               const auto& png = r->frames_png[n];
               res.set_content(reinterpret_cast<const char*>(png.data()), png.size(), "image/png");
             }));
    http.Get(R"(/media/([^/]+)/([^/]+)/audio)", guarded([this](const httplib::Request& req, httplib::Response& res) {
               const auto r = rendered(req.matches[1], parse_play_side(req.matches[2]));
               res.set_content(reinterpret_cast<const char*>(r->wav.data()), r->wav.size(), "audio/wav");
             }));
    http.Get(R"(/experiment/([^/]+)/results)", guarded([this](const httplib::Request& req, httplib::Response& res) {
               const Experiment& e = store.experiment();
               if (req.matches[1] != e.experiment_id) throw NotFoundError("unknown experiment " + std::string(req.matches[1]));
               const std::string partial = req.get_param_value("partial");
               send_json(res, experiment_results(e, store.judgments(), partial == "1" || partial == "true"));
             }));
    http.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) send_json(res, {{"error", "not-found"}, {"message", "no such endpoint"}}, res.status);
    });
  }
};

ExperimentServer::ExperimentServer(ExperimentStore& store, UtteranceLoader loader, MediaOptions media)
    : impl_(std::make_unique<Impl>(store, std::move(loader), media)) {}

ExperimentServer::~ExperimentServer() { stop(); }

int ExperimentServer::start(const std::string& host, int port) {
  if (impl_->thread.joinable()) throw PreconditionError("server already running");
  const int bound = port == 0 ? impl_->http.bind_to_any_port(host) : (impl_->http.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->http.listen_after_bind(); });
  impl_->http.wait_until_ready();
  return bound;
}

void ExperimentServer::wait() {
  if (impl_->thread.joinable()) impl_->thread.join();
}

void ExperimentServer::stop() {
  impl_->http.stop();
  wait();
}

}  // namespace tonguesync::experiment
