#include "hmmac/session_service.hpp"

#include <httplib.h>

#include <atomic>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "hmmac/errors.hpp"
#include "hmmac/rng.hpp"

namespace hmmac {

namespace fs = std::filesystem;

namespace {

void write_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + tmp.string());
    os << text;
  }
  fs::rename(tmp, path);
}

nlohmann::json trials_json(const std::vector<Trial>& trials) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& tr : trials) {
    nlohmann::json row{{"t", tr.t}, {"action", tr.action}, {"outcome", tr.outcome}, {"correct", tr.correct}};
    row["response_time_ms"] = tr.response_time_ms ? nlohmann::json(*tr.response_time_ms) : nlohmann::json(nullptr);
    out.push_back(std::move(row));
  }
  return out;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

fs::path sessions_dir(const ServiceConfig& c) { return c.data_dir / "sessions"; }
fs::path assignments_path(const ServiceConfig& c) { return c.data_dir / "assignments.json"; }

}  // namespace

int http_status(ServiceErrorKind kind) {
  switch (kind) {
    case ServiceErrorKind::kNotFound: return 404;
    case ServiceErrorKind::kConflict: return 409;
    case ServiceErrorKind::kGone: return 410;
    case ServiceErrorKind::kUnprocessable: return 422;
    case ServiceErrorKind::kNoAssignment: return 503;
  }
  return 500;
}

void ServiceConfig::validate() const {
  if (data_dir.empty()) throw ConfigError("ServiceConfig: data_dir must be set");
  if (!(idle_timeout_seconds > 0.0)) throw ConfigError("ServiceConfig: idle timeout must be positive");
  if (points_per_correct < 0) throw ConfigError("ServiceConfig: points_per_correct must be >= 0");
}

std::string to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::kActive: return "active";
    case SessionStatus::kFinalized: return "finalized";
    case SessionStatus::kExpired: return "expired";
  }
  return "active";
}

int LiveSession::score() const {
  int n = 0;
  for (const auto& tr : trials) n += tr.correct ? 1 : 0;
  return n;
}

void to_json(nlohmann::json& j, const LiveSession& s) {
  j = nlohmann::json{{"session_id", s.session_id},
                     {"slot_id", s.slot_id},
                     {"task", s.task},
                     {"outcomes", s.outcomes},
                     {"trials", trials_json(s.trials)},
                     {"seed", s.seed},
                     {"corpus_tag", s.corpus_tag},
                     {"iteration_index", s.iteration_index},
                     {"meta", s.meta},
                     {"status", to_string(s.status)},
                     {"created_at", s.created_at},
                     {"last_activity", s.last_activity},
                     {"persisted", s.persisted}};
}

void from_json(const nlohmann::json& j, LiveSession& s) {
  s.session_id = j.at("session_id").get<std::string>();
  s.slot_id = j.at("slot_id").get<std::string>();
  s.task = j.at("task").get<TaskParams>();
  s.outcomes = j.at("outcomes").get<std::vector<std::uint8_t>>();
  s.trials.clear();
  for (const auto& row : j.at("trials")) {
    Trial tr;
    tr.t = row.at("t").get<int>();
    tr.action = row.at("action").get<std::uint8_t>();
    tr.outcome = row.at("outcome").get<std::uint8_t>();
    tr.correct = row.at("correct").get<bool>();
    if (!row.at("response_time_ms").is_null()) tr.response_time_ms = row.at("response_time_ms").get<double>();
    s.trials.push_back(tr);
  }
  s.seed = j.at("seed").get<std::uint64_t>();
  s.corpus_tag = j.at("corpus_tag").get<std::string>();
  s.iteration_index = j.at("iteration_index").get<int>();
  s.meta = j.at("meta");
  const auto status = j.at("status").get<std::string>();
  s.status = status == "finalized" ? SessionStatus::kFinalized
             : status == "expired" ? SessionStatus::kExpired
                                   : SessionStatus::kActive;
  s.created_at = j.at("created_at").get<double>();
  s.last_activity = j.at("last_activity").get<double>();
  s.persisted = j.at("persisted").get<bool>();
}

SessionRecord to_record(const LiveSession& s, bool truncated) {
  SessionRecord rec;
  rec.session_id = s.session_id;
  rec.agent.kind = "human";
  rec.agent.params = s.meta;
  rec.agent.params_hash = hash_hex(s.meta.dump());
  rec.task = s.task;
  rec.trials = s.trials;
  rec.seed = s.seed;
  rec.corpus_tag = s.corpus_tag;
  rec.iteration_index = s.iteration_index;
  rec.truncated = truncated;
  return rec;
}

SessionManager::SessionManager(ServiceConfig config, Clock clock) : config_(std::move(config)), clock_(std::move(clock)) {
  config_.validate();
  if (!clock_) {
    clock_ = [] {
      return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
    };
  }
  base_seed_ = config_.seed != 0 ? config_.seed : (std::uint64_t{std::random_device{}()} << 32) ^ std::random_device{}();
  fs::create_directories(sessions_dir(config_));
  load();
}

double SessionManager::now() const { return clock_(); }

void SessionManager::load() {
  if (fs::exists(assignments_path(config_))) {
    std::ifstream is(assignments_path(config_));
    const auto j = nlohmann::json::parse(is);
    for (const auto& [slot, v] : j.at("slots").items()) {
      slots_[slot] = SlotState{v.at("session_id").get<std::string>(), v.at("fulfilled").get<bool>()};
    }
    counter_ = j.value("counter", std::uint64_t{0});
  }
  for (const auto& entry : fs::directory_iterator(sessions_dir(config_))) {
    if (entry.path().extension() != ".json") continue;
    std::ifstream is(entry.path());
    auto s = nlohmann::json::parse(is).get<LiveSession>();
    sessions_[s.session_id] = std::move(s);
  }
}

void SessionManager::save_assignments() const {
  nlohmann::json slots = nlohmann::json::object();
  for (const auto& [id, st] : slots_) slots[id] = {{"session_id", st.session_id}, {"fulfilled", st.fulfilled}};
  write_atomic(assignments_path(config_), nlohmann::json{{"slots", slots}, {"counter", counter_}}.dump(2) + "\n");
}

void SessionManager::save_session(const LiveSession& s) const {
  write_atomic(sessions_dir(config_) / (s.session_id + ".json"), nlohmann::json(s).dump() + "\n");
}

std::uint64_t SessionManager::fresh_seed() { return derive_seed(base_seed_, counter_++); }

std::string SessionManager::fresh_id() {
  std::string id;
  do {
    id = hex64(fresh_seed());
  } while (sessions_.count(id) != 0);
  return id;
}

LiveSession& SessionManager::find(const std::string& id) {
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ServiceError(ServiceErrorKind::kNotFound, "unknown session");
  return it->second;
}

void SessionManager::persist_record(LiveSession& s, bool truncated) {
  if (s.persisted) return;
  if (!s.trials.empty()) {
    const std::string tag = s.corpus_tag.empty() ? "pilot" : s.corpus_tag;
    append_jsonl(dataset_path_for(config_.data_dir, tag), to_record(s, truncated));
  }
  s.persisted = true;
  if (!s.slot_id.empty()) {
    auto& slot = slots_[s.slot_id];
    if (s.trials.empty()) {
      // Nothing was observed, so the slot goes back to the pool.
      slot = SlotState{};
    } else {
      slot.fulfilled = true;
    }
    save_assignments();
  }
}

void SessionManager::touch_expiry(LiveSession& s) {
  if (s.status != SessionStatus::kActive) return;
  if (now() - s.last_activity <= config_.idle_timeout_seconds) return;
  s.status = SessionStatus::kExpired;
  persist_record(s, !s.done());
  save_session(s);
}

nlohmann::json SessionManager::create(const CreateRequest& request) {
  std::lock_guard lock(mu_);
  LiveSession s;
  s.meta = request.meta.is_object() ? request.meta : nlohmann::json::object();
  if (request.task) {
    try {
      request.task->validate();
    } catch (const std::exception& e) {
      throw ServiceError(ServiceErrorKind::kUnprocessable, e.what());
    }
    if (request.horizon < 1) throw ServiceError(ServiceErrorKind::kUnprocessable, "horizon must be >= 1");
    s.task = *request.task;
    s.seed = fresh_seed();
    s.outcomes = sample_trajectory(s.task, request.horizon, derive_seed(s.seed, 1)).observations;
  } else {
    const auto plan = config_.plan_path.empty() ? std::vector<PlanSlot>{} : read_plan(config_.plan_path);
    const PlanSlot* pick = nullptr;
    for (const auto& slot : plan) {
      auto it = slots_.find(slot.slot_id);
      if (it == slots_.end() || (it->second.session_id.empty() && !it->second.fulfilled)) {
        pick = &slot;
        break;
      }
    }
    if (!pick) throw ServiceError(ServiceErrorKind::kNoAssignment, "study full");
    s.slot_id = pick->slot_id;
    s.task = pick->task;
    s.seed = pick->seed;
    s.corpus_tag = pick->corpus_tag;
    s.iteration_index = pick->iteration_index;
    s.outcomes = sample_trajectory(s.task, pick->horizon, derive_seed(s.seed, 1)).observations;
  }
  s.session_id = fresh_id();
  s.created_at = s.last_activity = now();
  if (!s.slot_id.empty()) slots_[s.slot_id] = SlotState{s.session_id, false};
  save_session(s);
  save_assignments();
  const nlohmann::json out{{"session_id", s.session_id}, {"horizon", s.horizon()}};
  sessions_[s.session_id] = std::move(s);
  return out;
}

nlohmann::json SessionManager::view(const std::string& id) {
  std::lock_guard lock(mu_);
  auto& s = find(id);
  touch_expiry(s);
  nlohmann::json history = nlohmann::json::array();
  for (const auto& tr : s.trials) {
    history.push_back({{"t", tr.t}, {"action", tr.action}, {"outcome", tr.outcome}, {"correct", tr.correct}});
  }
  return {{"session_id", s.session_id},
          {"trial_index", s.cursor()},
          {"horizon", s.horizon()},
          {"history", history},
          {"score", s.score() * config_.points_per_correct},
          {"done", s.done()},
          {"status", to_string(s.status)}};
}

nlohmann::json SessionManager::choice_body(const LiveSession& s, int trial_index) const {
  const auto& tr = s.trials[static_cast<std::size_t>(trial_index - 1)];
  int correct_so_far = 0;
  for (int t = 0; t < trial_index; ++t) correct_so_far += s.trials[static_cast<std::size_t>(t)].correct ? 1 : 0;
  return {{"trial_index", trial_index},
          {"action", tr.action},
          {"outcome", tr.outcome},
          {"correct", tr.correct},
          {"done", trial_index == s.horizon()},
          {"score", correct_so_far * config_.points_per_correct}};
}

nlohmann::json SessionManager::choose(const std::string& id, const ChoiceRequest& request) {
  std::lock_guard lock(mu_);
  auto& s = find(id);
  touch_expiry(s);
  if (s.status != SessionStatus::kActive) throw ServiceError(ServiceErrorKind::kGone, "session is " + to_string(s.status));
  if (request.action > 1) throw ServiceError(ServiceErrorKind::kUnprocessable, "action must be 0 or 1");
  const int t = request.trial_index.value_or(s.cursor());
  if (t < 1) throw ServiceError(ServiceErrorKind::kUnprocessable, "trial_index must be >= 1");
  if (t < s.cursor()) throw ServiceError(ServiceErrorKind::kConflict, "trial already answered", choice_body(s, t));
  if (s.done()) throw ServiceError(ServiceErrorKind::kUnprocessable, "all trials answered");
  if (t > s.cursor()) throw ServiceError(ServiceErrorKind::kUnprocessable, "trial_index is ahead of the session");
  if (request.response_time_ms && !(*request.response_time_ms >= 0.0)) {
    throw ServiceError(ServiceErrorKind::kUnprocessable, "response_time_ms must be >= 0");
  }
  const std::uint8_t outcome = s.outcomes[static_cast<std::size_t>(t - 1)];
  s.trials.push_back(Trial{t, request.action, outcome, request.action == outcome, request.response_time_ms});
  s.last_activity = now();
  save_session(s);
  return choice_body(s, t);
}

nlohmann::json SessionManager::finalize(const std::string& id) {
  std::lock_guard lock(mu_);
  auto& s = find(id);
  touch_expiry(s);
  if (s.status == SessionStatus::kActive) {
    if (!s.done()) throw ServiceError(ServiceErrorKind::kConflict, "session still has trials to play");
    s.status = SessionStatus::kFinalized;
    persist_record(s, false);
    save_session(s);
  }
  const std::string tag = s.corpus_tag.empty() ? "pilot" : s.corpus_tag;
  return {{"session_id", s.session_id},
          {"status", to_string(s.status)},
          {"dataset", s.trials.empty() ? nlohmann::json(nullptr) : nlohmann::json(tag + ".jsonl")},
          {"score", s.score() * config_.points_per_correct}};
}

int SessionManager::expire_idle() {
  std::lock_guard lock(mu_);
  int n = 0;
  for (auto& [id, s] : sessions_) {
    const bool was_active = s.status == SessionStatus::kActive;
    touch_expiry(s);
    n += was_active && s.status == SessionStatus::kExpired ? 1 : 0;
  }
  return n;
}

std::size_t SessionManager::fulfilled_slots() {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const auto& [id, st] : slots_) n += st.fulfilled ? 1 : 0;
  return n;
}

nlohmann::json SessionManager::health() {
  std::lock_guard lock(mu_);
  std::size_t active = 0;
  for (const auto& [id, s] : sessions_) active += s.status == SessionStatus::kActive ? 1 : 0;
  std::size_t open = 0;
  if (!config_.plan_path.empty()) {
    for (const auto& slot : read_plan(config_.plan_path)) {
      auto it = slots_.find(slot.slot_id);
      open += it == slots_.end() || (it->second.session_id.empty() && !it->second.fulfilled) ? 1 : 0;
    }
  }
  return {{"status", "ok"}, {"active_sessions", active}, {"open_slots", open}};
}

nlohmann::json SessionManager::instructions() const {
  return {{"text", config_.instructions}, {"points_per_correct", config_.points_per_correct}};
}

// ---- HTTP -------------------------------------------------------------------

namespace {

void reply(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const ServiceError& e) {
    nlohmann::json body{{"error", e.what()}};
    if (!e.original.is_null()) body["original"] = e.original;
    reply(res, http_status(e.kind), body);
  } catch (const nlohmann::json::exception& e) {
    reply(res, 422, {{"error", std::string("malformed request: ") + e.what()}});
  } catch (const std::exception& e) {
    reply(res, 500, {{"error", e.what()}});
  }
}

nlohmann::json body_of(const httplib::Request& req) {
  if (req.body.empty()) return nlohmann::json::object();
  auto j = nlohmann::json::parse(req.body);
  if (!j.is_object()) throw ServiceError(ServiceErrorKind::kUnprocessable, "body must be a JSON object");
  return j;
}

}  // namespace

void install_routes(httplib::Server& server, SessionManager& manager) {
  server.Get("/health", [&](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, manager.health()); });
  });
  server.Get("/instructions", [&](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, manager.instructions()); });
  });
  server.Post("/sessions", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = body_of(req);
      CreateRequest cr;
      if (body.contains("task")) cr.task = body.at("task").get<TaskParams>();
      cr.horizon = body.value("horizon", cr.horizon);
      if (body.contains("meta")) cr.meta = body.at("meta");
      reply(res, 201, manager.create(cr));
    });
  });
  server.Get(R"(/sessions/([0-9a-f]+))", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, manager.view(req.matches[1])); });
  });
  server.Post(R"(/sessions/([0-9a-f]+)/choice)", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto body = body_of(req);
      if (!body.contains("action") || !body.at("action").is_number_integer()) {
        throw ServiceError(ServiceErrorKind::kUnprocessable, "action must be 0 or 1");
      }
      const auto a = body.at("action").get<long long>();
      if (a != 0 && a != 1) throw ServiceError(ServiceErrorKind::kUnprocessable, "action must be 0 or 1");
      ChoiceRequest cr;
      cr.action = static_cast<std::uint8_t>(a);
      if (body.contains("trial_index") && !body.at("trial_index").is_null()) cr.trial_index = body.at("trial_index").get<int>();
      if (body.contains("response_time_ms") && !body.at("response_time_ms").is_null()) {
        cr.response_time_ms = body.at("response_time_ms").get<double>();
      }
      reply(res, 200, manager.choose(req.matches[1], cr));
    });
  });
  server.Post(R"(/sessions/([0-9a-f]+)/finalize)", [&](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { reply(res, 200, manager.finalize(req.matches[1])); });
  });
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  server.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
}

void serve(SessionManager& manager, const std::string& host, int port) {
  httplib::Server server;
  install_routes(server, manager);
  std::atomic<bool> running{true};
  std::thread sweeper([&] {
    while (running) {
      for (int i = 0; i < 300 && running; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      if (running) manager.expire_idle();
    }
  });
  const bool ok = server.listen(host, port);
  running = false;
  sweeper.join();
  if (!ok) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace hmmac
