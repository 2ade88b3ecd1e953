#include "hmmac/records.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "hmmac/errors.hpp"

namespace hmmac {

double SessionRecord::accuracy() const {
  if (trials.empty()) return 0.0;
  int correct = 0;
  for (const auto& tr : trials) correct += tr.correct ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(trials.size());
}

void SessionRecord::validate() const {
  for (std::size_t i = 0; i < trials.size(); ++i) {
    const auto& tr = trials[i];
    if (tr.t != static_cast<int>(i) + 1) {
      throw ArgumentError("session " + session_id + ": trial indices are not contiguous from 1");
    }
    if (tr.action > 1 || tr.outcome > 1) throw ArgumentError("session " + session_id + ": non-binary trial");
    if (tr.correct != (tr.action == tr.outcome)) {
      throw ArgumentError("session " + session_id + ": correct flag disagrees with action/outcome");
    }
  }
}

void to_json(nlohmann::json& j, const SessionRecord& s) {
  nlohmann::json trials = nlohmann::json::array();
  for (const auto& tr : s.trials) {
    nlohmann::json row{{"t", tr.t}, {"action", tr.action}, {"outcome", tr.outcome},
                       {"correct", tr.correct}};
    row["response_time_ms"] = tr.response_time_ms ? nlohmann::json(*tr.response_time_ms)
                                                   : nlohmann::json(nullptr);
    trials.push_back(std::move(row));
  }
  j = nlohmann::json{
      {"session_id", s.session_id},
      {"agent", {{"kind", s.agent.kind}, {"params_hash", s.agent.params_hash}, {"params", s.agent.params}}},
      {"task", s.task},
      {"trials", std::move(trials)},
      {"seed", s.seed},
      {"corpus_tag", s.corpus_tag},
      {"iteration_index", s.iteration_index},
      {"truncated", s.truncated}};
}

void from_json(const nlohmann::json& j, SessionRecord& s) {
  s.session_id = j.at("session_id").get<std::string>();
  const auto& agent = j.at("agent");
  s.agent.kind = agent.at("kind").get<std::string>();
  s.agent.params_hash = agent.value("params_hash", "");
  s.agent.params = agent.value("params", nlohmann::json::object());
  s.task = j.at("task").get<TaskParams>();
  s.trials.clear();
  for (const auto& row : j.at("trials")) {
    Trial tr;
    tr.t = row.at("t").get<int>();
    tr.action = row.at("action").get<std::uint8_t>();
    tr.outcome = row.at("outcome").get<std::uint8_t>();
    tr.correct = row.at("correct").get<bool>();
    if (row.contains("response_time_ms") && !row.at("response_time_ms").is_null()) {
      tr.response_time_ms = row.at("response_time_ms").get<double>();
    }
    s.trials.push_back(tr);
  }
  s.seed = j.value("seed", std::uint64_t{0});
  s.corpus_tag = j.value("corpus_tag", "");
  s.iteration_index = j.value("iteration_index", 0);
  s.truncated = j.value("truncated", false);
}

Episode to_episode(const SessionRecord& s) {
  Episode e;
  e.actions.reserve(s.trials.size());
  e.outcomes.reserve(s.trials.size());
  for (const auto& tr : s.trials) {
    e.actions.push_back(tr.action);
    e.outcomes.push_back(tr.outcome);
  }
  return e;
}

std::vector<Episode> Dataset::episodes() const {
  std::vector<Episode> out;
  out.reserve(sessions.size());
  for (const auto& s : sessions) out.push_back(to_episode(s));
  return out;
}

double Dataset::mean_accuracy() const {
  if (sessions.empty()) return 0.0;
  double total = 0.0;
  std::size_t trials = 0;
  for (const auto& s : sessions) {
    total += s.accuracy() * static_cast<double>(s.trials.size());
    trials += s.trials.size();
  }
  return trials ? total / static_cast<double>(trials) : 0.0;
}

std::string hash_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::string Dataset::fingerprint() const { return fingerprint_of({this}); }

std::string fingerprint_of(const std::vector<const Dataset*>& parts) {
  std::string bytes;
  for (const Dataset* d : parts) {
    for (const auto& s : d->sessions) {
      bytes += s.session_id;
      bytes.push_back('|');
      for (const auto& tr : s.trials) {
        bytes.push_back(static_cast<char>('0' + tr.action));
        bytes.push_back(static_cast<char>('0' + tr.outcome));
      }
      bytes.push_back(';');
    }
    bytes.push_back('#');
  }
  return hash_hex(bytes);
}

Dataset merge_datasets(const std::vector<const Dataset*>& parts, const std::string& id) {
  Dataset out;
  out.id = id;
  out.corpus_tag = id;
  nlohmann::json members = nlohmann::json::array();
  for (const Dataset* d : parts) {
    out.sessions.insert(out.sessions.end(), d->sessions.begin(), d->sessions.end());
    members.push_back(d->id);
  }
  out.metadata["members"] = members;
  out.metadata["fingerprint"] = fingerprint_of(parts);
  return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<SessionRecord>& sessions) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  for (const auto& s : sessions) os << nlohmann::json(s).dump() << '\n';
}

void append_jsonl(const std::filesystem::path& path, const SessionRecord& session) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::app);
  if (!os) throw std::runtime_error("cannot append to " + path.string());
  os << nlohmann::json(session).dump() << '\n';
}

std::vector<SessionRecord> read_jsonl(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read " + path.string());
  std::vector<SessionRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(nlohmann::json::parse(line).get<SessionRecord>());
  }
  return out;
}

Dataset load_dataset(const std::filesystem::path& path, const std::string& id) {
  Dataset d;
  d.sessions = read_jsonl(path);
  d.id = id.empty() ? path.stem().string() : id;
  d.corpus_tag = d.sessions.empty() ? d.id : d.sessions.front().corpus_tag;
  return d;
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  write_jsonl(path, dataset.sessions);
}

}  // namespace hmmac
