#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "incubator/control.hpp"
#include "incubator/plant.hpp"
#include "incubator/wire.hpp"

namespace httplib {
class Client;
}

namespace incubator::ingest {
class Service;
}

namespace incubator::agent {

enum class ClockMode { simulated, realtime };

struct AgentConfig {
  std::string server_url = "http://127.0.0.1:8080";
  std::int64_t channel_id = 1;
  std::string write_key;
  std::uint64_t seed = 1;
  double dt_s = 1.0;
  double duration_s = 3600.0;
  control::ControllerConfig controller;
  control::HumidifierConfig humidifier;
  plant::SensorModelConfig sensors;
  plant::PlantParams plant;
  std::optional<plant::PlantState> initial_state;
  plant::Scenario scenario;
  ClockMode clock = ClockMode::simulated;
  int command_poll_every_n_ticks = 5;
  /// Wall-clock origin of simulated time.
  Timestamp start_time{1704067200};  // 2024-01-01T00:00:00Z
  std::optional<std::filesystem::path> local_log;
  std::size_t buffer_capacity = 1000;
};

void validate(const AgentConfig& cfg);

/// Relative scenario_file paths resolve against `base_dir`. Throws ConfigError.
AgentConfig parse_agent_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
AgentConfig load_agent_config(const std::filesystem::path& path);

struct PostOutcome {
  enum class Kind { accepted, rejected, unreachable };
  Kind kind = Kind::unreachable;
  int status = 0;
  std::int64_t entry_id = 0;
};

struct PollOutcome {
  bool reachable = false;
  std::optional<wire::Command> command;
};

/// How the agent reaches the ingest service.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual PostOutcome post_update(const wire::HttpRequestSpec& request) = 0;
  virtual PollOutcome poll_command() = 0;
};

class HttpTransport final : public Transport {
 public:
  HttpTransport(const std::string& server_url, std::int64_t channel_id, std::string write_key);
  ~HttpTransport() override;
  PostOutcome post_update(const wire::HttpRequestSpec& request) override;
  PollOutcome poll_command() override;

 private:
  std::unique_ptr<httplib::Client> client_;
  std::string poll_path_;
};

/// Calls an embedded Service directly (all-in-one mode).
class InProcessTransport final : public Transport {
 public:
  InProcessTransport(ingest::Service& service, std::int64_t channel_id, std::string write_key);
  PostOutcome post_update(const wire::HttpRequestSpec& request) override;
  PollOutcome poll_command() override;

 private:
  ingest::Service& service_;
  std::int64_t channel_id_;
  std::string write_key_;
};

struct AppliedCommand {
  std::int64_t command_id = 0;
  int tick = 0;
  std::string body;
  bool applied = false;  // false when re-validation rejected it
};

struct TickRecord {
  int tick = 0;
  plant::PlantState state;  // after the plant step
  SensorFrame frame;
  double heater_duty = 0.0;
  double humidifier_duty = 0.0;
  control::ControllerConfig controller;
};

struct RunSummary {
  int ticks = 0;
  int accepted = 0;
  int rejected = 0;
  int dropped = 0;          // evicted from a full retry buffer
  int unsent = 0;           // still buffered when the run ended
  int sensor_faults = 0;
  plant::PlantState final_state;
  control::ControllerConfig final_controller;
  std::vector<AppliedCommand> commands;
};

nlohmann::ordered_json summary_to_json(const RunSummary& s);

using TickObserver = std::function<void(const TickRecord&)>;

/// Runs the device loop. Per tick: fault events, controller step on the
/// latest reading, plant step, sensor sample, post (through a bounded retry
/// buffer). Every command_poll_every_n_ticks-th tick the command queue is
/// drained and valid commands are applied. Throws StorageError when the
/// local log cannot be written.
RunSummary run_agent(const AgentConfig& cfg, Transport& transport, const TickObserver& observer = {});

/// One record per frame in the server's record schema, entry_id from 1.
void write_local_log(const std::vector<SensorFrame>& frames, const std::filesystem::path& path);

/// Applies a validated command body to the controller and humidifier
/// settings. Returns false, leaving both untouched, if the body is invalid.
bool apply_command(std::string_view body, control::ControllerConfig& controller,
                   control::HumidifierConfig& humidifier);

struct ReplaySummary {
  int records = 0;
  int accepted = 0;
  int rejected = 0;
  int unreachable = 0;
};

/// Re-posts every record of an NDJSON log with its created_at.
ReplaySummary replay_log(const std::filesystem::path& path, std::string_view write_key, Transport& transport);

}  // namespace incubator::agent
