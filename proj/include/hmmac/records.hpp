#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hmmac/env_hmm.hpp"

namespace hmmac {

struct Trial {
  int t = 1;
  std::uint8_t action = 0;
  std::uint8_t outcome = 0;
  bool correct = false;
  std::optional<double> response_time_ms;

  friend bool operator==(const Trial&, const Trial&) = default;
};

// Who produced a session. kind is "human" or a synthetic agent kind; params
// holds the generating parameters (synthetic only, diagnostics only).
struct AgentDescriptor {
  std::string kind = "human";
  std::string params_hash;
  nlohmann::json params = nlohmann::json::object();

  friend bool operator==(const AgentDescriptor&, const AgentDescriptor&) = default;
};

struct SessionRecord {
  std::string session_id;
  AgentDescriptor agent;
  TaskParams task;
  std::vector<Trial> trials;
  std::uint64_t seed = 0;
  std::string corpus_tag;
  int iteration_index = 0;
  bool truncated = false;

  std::size_t horizon() const { return trials.size(); }
  double accuracy() const;

  // Throws ArgumentError unless trials are numbered 1..T and correct flags agree.
  void validate() const;

  friend bool operator==(const SessionRecord&, const SessionRecord&) = default;
};

void to_json(nlohmann::json& j, const SessionRecord& s);
void from_json(const nlohmann::json& j, SessionRecord& s);

// The action/outcome stream of one session: everything model fitting may see.
struct Episode {
  std::vector<std::uint8_t> actions;
  std::vector<std::uint8_t> outcomes;

  std::size_t length() const { return actions.size(); }
};

Episode to_episode(const SessionRecord& s);

struct Dataset {
  std::string id;
  std::string corpus_tag;
  std::vector<SessionRecord> sessions;
  nlohmann::json metadata = nlohmann::json::object();

  std::vector<Episode> episodes() const;
  double mean_accuracy() const;
  // Stable content hash (hex) of the behavioural data, used to fingerprint corpora.
  std::string fingerprint() const;
};

// Concatenation of datasets in order.
Dataset merge_datasets(const std::vector<const Dataset*>& parts, const std::string& id);

std::string fingerprint_of(const std::vector<const Dataset*>& parts);

// Line-delimited JSON: one SessionRecord per line.
void write_jsonl(const std::filesystem::path& path, const std::vector<SessionRecord>& sessions);
void append_jsonl(const std::filesystem::path& path, const SessionRecord& session);
std::vector<SessionRecord> read_jsonl(const std::filesystem::path& path);

Dataset load_dataset(const std::filesystem::path& path, const std::string& id = "");
void save_dataset(const std::filesystem::path& path, const Dataset& dataset);

// 64-bit FNV-1a, hex encoded.
std::string hash_hex(const std::string& bytes);

}  // namespace hmmac
