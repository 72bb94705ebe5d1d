#pragma once

#include <filesystem>
#include <vector>

#include <json.hpp>

#include "incubator/agent.hpp"
#include "incubator/ingest.hpp"

namespace incubator::fleet {

/// Embedded service plus a set of device agents.
struct FleetConfig {
  ingest::ServerConfig server;
  std::vector<agent::AgentConfig> agents;
  /// Also expose the embedded service over HTTP on server.port.
  bool serve_http = false;
};

/// {"server": {...}, "agents": [{...}], "serve_http": false}. Agents without a
/// write_key inherit their channel's. Throws ConfigError.
FleetConfig parse_fleet_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
FleetConfig load_fleet_config(const std::filesystem::path& path);

struct FleetResult {
  std::vector<agent::RunSummary> agents;
  int http_port = 0;
};

/// Runs every agent concurrently against the embedded service, then drains
/// notifications and shuts the service down.
FleetResult run_fleet(const FleetConfig& cfg);

}  // namespace incubator::fleet
