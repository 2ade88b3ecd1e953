#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hmmac/ac_loop.hpp"
#include "hmmac/env_hmm.hpp"
#include "hmmac/records.hpp"

namespace httplib {
class Server;
}

namespace hmmac {

// Error categories of the participant-facing API. The HTTP layer maps each
// to a status code (see http_status).
enum class ServiceErrorKind { kNotFound, kConflict, kGone, kUnprocessable, kNoAssignment };

struct ServiceError : std::runtime_error {
  ServiceError(ServiceErrorKind k, const std::string& what, nlohmann::json body = nullptr)
      : std::runtime_error(what), kind(k), original(std::move(body)) {}
  ServiceErrorKind kind;
  nlohmann::json original;  // for conflicts: the response first given for that trial
};

int http_status(ServiceErrorKind kind);

struct ServiceConfig {
  std::filesystem::path plan_path;  // empty: explicit-task (pilot) sessions only
  std::filesystem::path data_dir = "data";
  double idle_timeout_seconds = 30.0 * 60.0;
  std::string instructions =
      "A coin is tossed on every round. Before each toss, guess whether it lands heads or tails. "
      "Each correct guess earns points. Try to be right as often as you can.";
  int points_per_correct = 1;
  std::uint64_t seed = 0;  // 0: draw from std::random_device

  void validate() const;
};

enum class SessionStatus { kActive, kFinalized, kExpired };

std::string to_string(SessionStatus s);

// Server-side state of one participant. Everything below the cursor is
// public to that participant; the task and future outcomes never are.
struct LiveSession {
  std::string session_id;
  std::string slot_id;  // empty in pilot mode
  TaskParams task;
  std::vector<std::uint8_t> outcomes;
  std::vector<Trial> trials;
  std::uint64_t seed = 0;
  std::string corpus_tag;
  int iteration_index = 0;
  nlohmann::json meta = nlohmann::json::object();
  SessionStatus status = SessionStatus::kActive;
  double created_at = 0.0;
  double last_activity = 0.0;
  bool persisted = false;

  int horizon() const { return static_cast<int>(outcomes.size()); }
  int cursor() const { return static_cast<int>(trials.size()) + 1; }
  bool done() const { return trials.size() == outcomes.size(); }
  int score() const;
};

void to_json(nlohmann::json& j, const LiveSession& s);
void from_json(const nlohmann::json& j, LiveSession& s);

struct CreateRequest {
  std::optional<TaskParams> task;  // pilot mode
  int horizon = 50;                // pilot mode only; plan slots carry their own
  nlohmann::json meta = nlohmann::json::object();
};

struct ChoiceRequest {
  std::uint8_t action = 0;
  std::optional<int> trial_index;  // idempotency key; defaults to the current trial
  std::optional<double> response_time_ms;
};

// Thread-safe session registry. Slot assignments and live sessions are
// mirrored to data_dir so a restarted service resumes where it stopped.
class SessionManager {
 public:
  using Clock = std::function<double()>;  // seconds

  explicit SessionManager(ServiceConfig config, Clock clock = {});

  nlohmann::json create(const CreateRequest& request);
  nlohmann::json view(const std::string& id);
  nlohmann::json choose(const std::string& id, const ChoiceRequest& request);
  nlohmann::json finalize(const std::string& id);
  nlohmann::json health();
  nlohmann::json instructions() const;

  // Persists and closes every session idle for longer than the timeout.
  // Returns the number of sessions expired.
  int expire_idle();

  const ServiceConfig& config() const { return config_; }
  std::size_t fulfilled_slots();

 private:
  struct SlotState {
    std::string session_id;
    bool fulfilled = false;
  };

  double now() const;
  LiveSession& find(const std::string& id);
  void touch_expiry(LiveSession& s);
  void persist_record(LiveSession& s, bool truncated);
  void save_session(const LiveSession& s) const;
  void save_assignments() const;
  void load();
  std::string fresh_id();
  std::uint64_t fresh_seed();
  nlohmann::json choice_body(const LiveSession& s, int trial_index) const;

  ServiceConfig config_;
  Clock clock_;
  std::mutex mu_;
  std::map<std::string, LiveSession> sessions_;
  std::map<std::string, SlotState> slots_;
  std::uint64_t base_seed_ = 0;
  std::uint64_t counter_ = 0;
};

SessionRecord to_record(const LiveSession& s, bool truncated);

// Installs the JSON endpoints on `server`.
void install_routes(httplib::Server& server, SessionManager& manager);

// Blocks serving on host:port; a background thread expires idle sessions.
void serve(SessionManager& manager, const std::string& host, int port);

}  // namespace hmmac
