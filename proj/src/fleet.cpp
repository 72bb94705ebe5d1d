#include "incubator/fleet.hpp"

#include <algorithm>
#include <exception>
#include <optional>
#include <fstream>
#include <thread>

#include <fmt/format.h>

#include "incubator/error.hpp"

namespace incubator::fleet {

FleetConfig parse_fleet_config(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  if (!doc.is_object()) throw ConfigError("all-in-one config must be a JSON object");
  FleetConfig cfg;
  try {
    cfg.server = ingest::parse_server_config(doc.value("server", nlohmann::json::object()));
    cfg.serve_http = doc.value("serve_http", false);
    for (const auto& a : doc.value("agents", nlohmann::json::array())) {
      agent::AgentConfig ac = agent::parse_agent_config(a, base_dir);
      const auto ch = std::find_if(cfg.server.channels.begin(), cfg.server.channels.end(),
                                   [&](const auto& c) { return c.channel_id == ac.channel_id; });
      if (ch == cfg.server.channels.end()) {
        throw ConfigError(fmt::format("agent targets unknown channel {}", ac.channel_id));
      }
      if (ac.write_key.empty()) ac.write_key = ch->write_key;
      agent::validate(ac);
      cfg.agents.push_back(std::move(ac));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("all-in-one config: {}", e.what()));
  }
  if (cfg.agents.empty()) throw ConfigError("all-in-one config needs at least one agent");
  return cfg;
}

FleetConfig load_fleet_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config {}", path.string()));
  try {
    return parse_fleet_config(nlohmann::json::parse(in), path.parent_path());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(fmt::format("config {}: {}", path.string(), e.what()));
  }
}

FleetResult run_fleet(const FleetConfig& cfg) {
  ingest::Service service(cfg.server);
  std::optional<ingest::HttpServer> http;
  FleetResult result;
  if (cfg.serve_http) {
    http.emplace(service);
    result.http_port = http->bind(cfg.server.host, cfg.server.port);
    http->start();
  }

  result.agents.resize(cfg.agents.size());
  std::vector<std::exception_ptr> errors(cfg.agents.size());
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < cfg.agents.size(); ++i) {
    threads.emplace_back([&, i] {
      try {
        const auto& ac = cfg.agents[i];
        agent::InProcessTransport transport(service, ac.channel_id, ac.write_key);
        result.agents[i] = agent::run_agent(ac, transport);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();

  service.drain_notifications();
  if (http) http->stop();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return result;
}

}  // namespace incubator::fleet
