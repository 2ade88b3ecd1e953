#include <gtest/gtest.h>
#include <httplib.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <future>
#include <set>
#include <thread>

#include <unistd.h>

#include "hmmac/agents.hpp"
#include "hmmac/errors.hpp"
#include "hmmac/rng.hpp"
#include "hmmac/session_service.hpp"

using namespace hmmac;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("hmmac_svc_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter()++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

std::vector<PlanSlot> make_plan(int n, const std::string& tag = "AC2", int horizon = 50) {
  std::vector<PlanSlot> slots;
  for (int i = 0; i < n; ++i) {
    slots.push_back({tag + "-" + std::to_string(i), tag, 2, TaskParams{0.1, 0.2, 0.15, 0.85},
                     derive_seed(77, static_cast<std::uint64_t>(i)), horizon});
  }
  return slots;
}

struct Fixture {
  TempDir dir;
  double clock = 1000.0;
  ServiceConfig config;
  std::unique_ptr<SessionManager> manager;

  explicit Fixture(int slots, int horizon = 50) {
    config.plan_path = dir.path / "plan.json";
    config.data_dir = dir.path / "data";
    config.seed = 5;
    write_plan(config.plan_path, make_plan(slots, "AC2", horizon));
    reopen();
  }
  void reopen() { manager = std::make_unique<SessionManager>(config, [this] { return clock; }); }
};

ServiceErrorKind error_kind(const std::function<void()>& f) {
  try {
    f();
  } catch (const ServiceError& e) {
    return e.kind;
  }
  ADD_FAILURE() << "expected ServiceError";
  return ServiceErrorKind::kNotFound;
}

// Every key anywhere in a JSON document.
void collect_keys(const nlohmann::json& j, std::set<std::string>& keys) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) {
      keys.insert(k);
      collect_keys(v, keys);
    }
  } else if (j.is_array()) {
    for (const auto& v : j) collect_keys(v, keys);
  }
}

}  // namespace

TEST(SessionService, OneSlotMeansOneSession) {
  Fixture f(1);
  const auto created = f.manager->create({});
  EXPECT_EQ(created.at("horizon"), 50);
  EXPECT_EQ(error_kind([&] { f.manager->create({}); }), ServiceErrorKind::kNoAssignment);
  EXPECT_EQ(http_status(ServiceErrorKind::kNoAssignment), 503);
}

TEST(SessionService, NewSessionStartsAtTrialOne) {
  Fixture f(2);
  const auto id = f.manager->create({}).at("session_id").get<std::string>();
  const auto v = f.manager->view(id);
  EXPECT_EQ(v.at("trial_index"), 1);
  EXPECT_TRUE(v.at("history").empty());
  EXPECT_EQ(v.at("score"), 0);
  EXPECT_FALSE(v.at("done").get<bool>());
}

TEST(SessionService, FullSessionScoresAndFinishes) {
  Fixture f(1);
  const auto id = f.manager->create({}).at("session_id").get<std::string>();
  const auto outcomes = sample_trajectory(TaskParams{0.1, 0.2, 0.15, 0.85}, 50, derive_seed(derive_seed(77, 0), 1)).observations;
  int score = 0;
  for (int t = 1; t <= 50; ++t) {
    const std::uint8_t a = t % 3 == 0 ? 1 : 0;
    const auto r = f.manager->choose(id, {a, std::nullopt, 400.0 + t});
    EXPECT_EQ(r.at("trial_index"), t);
    EXPECT_EQ(r.at("outcome"), outcomes[t - 1]);
    EXPECT_EQ(r.at("correct").get<bool>(), a == outcomes[t - 1]);
    score += a == outcomes[t - 1];
    EXPECT_EQ(r.at("score"), score);
    EXPECT_EQ(r.at("done").get<bool>(), t == 50);
  }
  EXPECT_EQ(error_kind([&] { f.manager->choose(id, {1, std::nullopt, std::nullopt}); }), ServiceErrorKind::kUnprocessable);
  EXPECT_EQ(error_kind([&] { f.manager->choose(id, {2, std::nullopt, std::nullopt}); }), ServiceErrorKind::kUnprocessable);
}

TEST(SessionService, ReplayedTrialReturnsOriginalWithoutChangingState) {
  Fixture f(1);
  const auto id = f.manager->create({}).at("session_id").get<std::string>();
  nlohmann::json seventh;
  for (int t = 1; t <= 9; ++t) {
    auto r = f.manager->choose(id, {1, t, 300.0});
    if (t == 7) seventh = r;
  }
  const auto before = f.manager->view(id);
  try {
    f.manager->choose(id, {0, 7, 10.0});
    FAIL() << "duplicate accepted";
  } catch (const ServiceError& e) {
    EXPECT_EQ(e.kind, ServiceErrorKind::kConflict);
    EXPECT_EQ(e.original, seventh);
  }
  EXPECT_EQ(f.manager->view(id), before);
  EXPECT_EQ(error_kind([&] { f.manager->choose(id, {0, 12, 10.0}); }), ServiceErrorKind::kUnprocessable);
}

TEST(SessionService, NoResponseLeaksHiddenState) {
  Fixture f(1);
  std::vector<nlohmann::json> responses;
  responses.push_back(f.manager->health());
  responses.push_back(f.manager->instructions());
  const auto created = f.manager->create({});
  responses.push_back(created);
  const auto id = created.at("session_id").get<std::string>();
  for (int t = 1; t <= 50; ++t) {
    const auto v = f.manager->view(id);
    EXPECT_EQ(v.at("history").size(), static_cast<std::size_t>(t - 1));
    responses.push_back(v);
    responses.push_back(f.manager->choose(id, {static_cast<std::uint8_t>(t % 2), std::nullopt, std::nullopt}));
  }
  try {
    f.manager->choose(id, {0, 3, std::nullopt});
  } catch (const ServiceError& e) {
    responses.push_back(e.original);
  }
  responses.push_back(f.manager->finalize(id));
  responses.push_back(f.manager->view(id));
  const std::set<std::string> forbidden{"p1", "p2", "r1", "r2", "mu", "task", "states", "state",
                                        "outcomes", "seed", "slot_id", "corpus_tag", "iteration_index"};
  for (const auto& r : responses) {
    std::set<std::string> keys;
    collect_keys(r, keys);
    for (const auto& k : forbidden) EXPECT_EQ(keys.count(k), 0u) << k << " in " << r.dump();
  }
  EXPECT_EQ(f.manager->instructions().at("text").get<std::string>().find("state"), std::string::npos);
}

TEST(SessionService, FinalizeAppendsOneRecordMatchingSyntheticSchema) {
  Fixture f(2);
  const auto id = f.manager->create({{}, 50, {{"consent", true}}}).at("session_id").get<std::string>();
  EXPECT_EQ(error_kind([&] { f.manager->finalize(id); }), ServiceErrorKind::kConflict);
  for (int t = 1; t <= 50; ++t) f.manager->choose(id, {1, t, 250.0});
  const auto r1 = f.manager->finalize(id);
  const auto r2 = f.manager->finalize(id);
  EXPECT_EQ(r1, r2);
  EXPECT_EQ(r1.at("dataset"), "AC2.jsonl");
  const auto path = dataset_path_for(f.config.data_dir, "AC2");
  const auto records = read_jsonl(path);
  ASSERT_EQ(records.size(), 1u);
  EXPECT_EQ(f.manager->fulfilled_slots(), 1u);
  const auto& rec = records[0];
  EXPECT_EQ(rec.agent.kind, "human");
  EXPECT_EQ(rec.agent.params.at("consent"), true);
  EXPECT_FALSE(rec.truncated);
  EXPECT_NO_THROW(rec.validate());

  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(nlohmann::json(rec).dump(), line);

  // Same slot seed as the synthetic path: identical outcomes, identical keys.
  const auto synth = simulate_session(AgentSpec{}, rec.task, 50, rec.seed, "AC2-0", {"AC2", 2});
  for (int t = 0; t < 50; ++t) EXPECT_EQ(synth.trials[t].outcome, rec.trials[t].outcome);
  auto human = nlohmann::json(rec);
  auto machine = nlohmann::json(synth);
  human["agent"].erase("params");
  machine["agent"].erase("params");
  std::set<std::string> human_keys, synth_keys;
  collect_keys(human, human_keys);
  collect_keys(machine, synth_keys);
  EXPECT_EQ(human_keys, synth_keys);
}

TEST(SessionService, IdleSessionsExpireTruncatedAndGone) {
  Fixture f(2);
  const auto id = f.manager->create({}).at("session_id").get<std::string>();
  for (int t = 1; t <= 10; ++t) f.manager->choose(id, {0, t, std::nullopt});
  f.clock += 29 * 60;
  EXPECT_EQ(f.manager->expire_idle(), 0);
  f.clock += 2 * 60;
  EXPECT_EQ(f.manager->expire_idle(), 1);
  EXPECT_EQ(error_kind([&] { f.manager->choose(id, {0, 11, std::nullopt}); }), ServiceErrorKind::kGone);
  EXPECT_EQ(f.manager->view(id).at("status"), "expired");
  EXPECT_EQ(f.manager->finalize(id).at("status"), "expired");
  const auto records = read_jsonl(dataset_path_for(f.config.data_dir, "AC2"));
  ASSERT_EQ(records.size(), 1u);
  EXPECT_TRUE(records[0].truncated);
  EXPECT_EQ(records[0].trials.size(), 10u);
}

TEST(SessionService, UntouchedExpiredSessionReleasesItsSlot) {
  Fixture f(1);
  f.manager->create({});
  f.clock += 31 * 60;
  f.manager->expire_idle();
  EXPECT_FALSE(fs::exists(dataset_path_for(f.config.data_dir, "AC2")));
  EXPECT_NO_THROW(f.manager->create({}));
}

TEST(SessionService, RestartResumesSessionsAndAssignments) {
  Fixture f(2);
  const auto id = f.manager->create({}).at("session_id").get<std::string>();
  for (int t = 1; t <= 5; ++t) f.manager->choose(id, {1, t, std::nullopt});
  const auto before = f.manager->view(id);
  f.reopen();
  EXPECT_EQ(f.manager->view(id), before);
  f.manager->create({});
  EXPECT_EQ(error_kind([&] { f.manager->create({}); }), ServiceErrorKind::kNoAssignment);
}

TEST(SessionService, ConcurrentCreatesNeverDoubleAssign) {
  Fixture f(5);
  std::atomic<int> ok{0}, full{0};
  std::vector<std::thread> threads;
  std::mutex ids_mu;
  std::set<std::string> ids;
  for (int i = 0; i < 8; ++i) {
    threads.emplace_back([&] {
      for (int k = 0; k < 2; ++k) {
        try {
          auto id = f.manager->create({}).at("session_id").get<std::string>();
          std::lock_guard lock(ids_mu);
          ids.insert(id);
          ++ok;
        } catch (const ServiceError&) {
          ++full;
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(ok.load(), 5);
  EXPECT_EQ(full.load(), 11);
  EXPECT_EQ(ids.size(), 5u);
  std::ifstream is(f.config.data_dir / "assignments.json");
  const auto j = nlohmann::json::parse(is);
  std::set<std::string> owners;
  for (const auto& [slot, v] : j.at("slots").items()) owners.insert(v.at("session_id").get<std::string>());
  EXPECT_EQ(owners, ids);
}

TEST(SessionService, PilotModeUsesExplicitTask) {
  Fixture f(0);
  EXPECT_EQ(error_kind([&] { f.manager->create({}); }), ServiceErrorKind::kNoAssignment);
  const auto c = f.manager->create({TaskParams{0.5, 0.5, 0.5, 0.5}, 12, {}});
  EXPECT_EQ(c.at("horizon"), 12);
  EXPECT_EQ(error_kind([&] { f.manager->create({TaskParams{1.5, 0.5, 0.5, 0.5}, 12, {}}); }),
            ServiceErrorKind::kUnprocessable);
}

TEST(SessionService, QueueSourceCollectsSessionsPlayedThroughService) {
  TempDir dir;
  ParticipantConfig pc;
  pc.mode = "queue";
  pc.plan_path = dir.path / "plan.json";
  pc.data_dir = dir.path / "data";
  pc.timeout_seconds = 30;
  pc.poll_milliseconds = 20;
  QueueSource queue(pc);
  CollectionRequest request{{TaskParams{0.3, 0.3, 0.2, 0.8}, TaskParams{0.3, 0.3, 0.2, 0.8}}, 20, 91, "AC3", 3};
  auto pending = std::async(std::launch::async, [&] { return queue.collect(request); });

  ServiceConfig sc;
  sc.plan_path = pc.plan_path;
  sc.data_dir = pc.data_dir;
  sc.seed = 3;
  SessionManager manager(sc);
  int played = 0;
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(20);
  while (played < 2 && std::chrono::steady_clock::now() < deadline) {
    try {
      const auto id = manager.create({}).at("session_id").get<std::string>();
      for (int t = 1; t <= 20; ++t) manager.choose(id, {static_cast<std::uint8_t>(t % 2), t, 100.0});
      manager.finalize(id);
      ++played;
    } catch (const ServiceError&) {
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
  }
  ASSERT_EQ(played, 2);
  const auto d = pending.get();
  ASSERT_EQ(d.sessions.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(d.sessions[i].corpus_tag, "AC3");
    EXPECT_EQ(d.sessions[i].iteration_index, 3);
    EXPECT_EQ(d.sessions[i].trials.size(), 20u);
  }
}

TEST(SessionService, HttpRoundTripAndStatusCodes) {
  Fixture f(1, 5);
  httplib::Server server;
  install_routes(server, *f.manager);
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client cli("127.0.0.1", port);

  auto health = cli.Get("/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(health->status, 200);
  EXPECT_EQ(nlohmann::json::parse(health->body).at("open_slots"), 1);

  auto created = cli.Post("/sessions", R"({"meta":{"consent":true}})", "application/json");
  ASSERT_TRUE(created);
  EXPECT_EQ(created->status, 201);
  const auto id = nlohmann::json::parse(created->body).at("session_id").get<std::string>();
  auto again = cli.Post("/sessions", "{}", "application/json");
  EXPECT_EQ(again->status, 503);

  EXPECT_EQ(cli.Get("/sessions/abc123")->status, 404);
  EXPECT_EQ(cli.Post("/sessions/" + id + "/choice", R"({"action":7})", "application/json")->status, 422);
  EXPECT_EQ(cli.Post("/sessions/" + id + "/choice", "not json", "application/json")->status, 422);
  EXPECT_EQ(cli.Post("/sessions/" + id + "/finalize", "", "application/json")->status, 409);

  std::string first;
  for (int t = 1; t <= 5; ++t) {
    auto r = cli.Post("/sessions/" + id + "/choice",
                      nlohmann::json{{"action", 1}, {"trial_index", t}, {"response_time_ms", 321.5}}.dump(),
                      "application/json");
    ASSERT_EQ(r->status, 200);
    if (t == 1) first = r->body;
  }
  auto dup = cli.Post("/sessions/" + id + "/choice", R"({"action":0,"trial_index":1})", "application/json");
  EXPECT_EQ(dup->status, 409);
  EXPECT_EQ(nlohmann::json::parse(dup->body).at("original"), nlohmann::json::parse(first));

  auto view = cli.Get("/sessions/" + id);
  EXPECT_EQ(nlohmann::json::parse(view->body).at("done"), true);
  auto fin = cli.Post("/sessions/" + id + "/finalize", "", "application/json");
  EXPECT_EQ(fin->status, 200);
  EXPECT_EQ(cli.Post("/sessions/" + id + "/finalize", "", "application/json")->status, 200);
  EXPECT_EQ(cli.Post("/sessions/" + id + "/choice", R"({"action":1})", "application/json")->status, 410);

  server.stop();
  th.join();
  const auto records = read_jsonl(dataset_path_for(f.config.data_dir, "AC2"));
  ASSERT_EQ(records.size(), 1u);
  EXPECT_EQ(records[0].trials[2].response_time_ms, 321.5);
}
