#pragma once

#include <functional>
#include <memory>
#include <string>

#include "tonguesync/error.hpp"
#include "tonguesync/experiment/media.hpp"
#include "tonguesync/experiment/session.hpp"

namespace tonguesync::experiment {

using UtteranceLoader = std::function<UtteranceRecord(const std::string& utterance_id)>;

/// HTTP status for an error kind: 400 bad input, 404 unknown, 409 out of
/// order or duplicate, 412 unmet precondition, 429 play limit, else 500.
int http_status(ErrorKind kind);

/// Participant-facing endpoints never carry correct sides, offsets or
/// provenance; only /experiment/{id}/results does.
class ExperimentServer {
 public:
  ExperimentServer(ExperimentStore& store, UtteranceLoader loader, MediaOptions media = {});
  ~ExperimentServer();
  ExperimentServer(const ExperimentServer&) = delete;
  ExperimentServer& operator=(const ExperimentServer&) = delete;

  /// Binds and serves on a background thread. Port 0 picks a free port;
  /// returns the bound port. Throws IoError when binding fails.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  /// Blocks until stop() is called from another thread or a signal handler.
  void wait();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace tonguesync::experiment
