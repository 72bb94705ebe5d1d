// incubator: run the ingest service, device agents, replays and reports.

#include <csignal>
#include <cstdlib>
#include <iostream>
#include <pthread.h>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "incubator/agent.hpp"
#include "incubator/error.hpp"
#include "incubator/fleet.hpp"
#include "incubator/ingest.hpp"
#include "incubator/report.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

using namespace incubator;

int run_serve(const std::string& config_path, std::optional<int> port_flag) {
  auto cfg = ingest::load_server_config(config_path);
  if (const char* env = std::getenv("PORT")) {
    try {
      cfg.port = std::stoi(env);
    } catch (const std::exception&) {
      throw ConfigError(fmt::format("PORT='{}' is not a number", env));
    }
  }
  if (port_flag) cfg.port = *port_flag;

  // Route SIGINT/SIGTERM to a waiter thread so the server shuts down in order.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  ingest::Service service(cfg);
  ingest::HttpServer http(service);
  const int port = http.bind(cfg.host, cfg.port);
  spdlog::info("serving {} channel(s) on {}:{}", cfg.channels.size(), cfg.host, port);
  std::cout << fmt::format("listening {}\n", port) << std::flush;

  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    spdlog::info("signal {}; shutting down", sig);
    http.stop();
  });
  http.listen();
  // listen() also returns if the server stops on its own; release the waiter.
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  service.drain_notifications();
  return kExitOk;
}

int run_device(const std::string& config_path) {
  const auto cfg = agent::load_agent_config(config_path);
  agent::HttpTransport transport(cfg.server_url, cfg.channel_id, cfg.write_key);
  const auto summary = agent::run_agent(cfg, transport);
  std::cout << agent::summary_to_json(summary).dump(2) << "\n";
  return kExitOk;
}

int run_all_in_one(const std::string& config_path) {
  const auto cfg = fleet::load_fleet_config(config_path);
  const auto result = fleet::run_fleet(cfg);
  nlohmann::ordered_json out;
  out["agents"] = nlohmann::ordered_json::array();
  for (const auto& s : result.agents) out["agents"].push_back(agent::summary_to_json(s));
  std::cout << out.dump(2) << "\n";
  return kExitOk;
}

int run_replay(const std::string& log_path, const std::string& server, const std::string& write_key,
               std::int64_t channel) {
  if (!std::filesystem::exists(log_path)) throw ConfigError(fmt::format("no log at {}", log_path));
  agent::HttpTransport transport(server, channel, write_key);
  const auto s = agent::replay_log(log_path, write_key, transport);
  nlohmann::ordered_json out{
      {"records", s.records}, {"accepted", s.accepted}, {"rejected", s.rejected}, {"unreachable", s.unreachable}};
  std::cout << out.dump(2) << "\n";
  return s.unreachable > 0 ? kExitRuntime : kExitOk;
}

int run_report(const std::string& data_dir, std::int64_t channel, double window, const std::string& config_path) {
  std::vector<alert::AlertRule> rules = alert::default_rules();
  if (!config_path.empty()) {
    const auto cfg = ingest::load_server_config(config_path);
    const auto it = std::find_if(cfg.channels.begin(), cfg.channels.end(),
                                 [&](const auto& c) { return c.channel_id == channel; });
    if (it == cfg.channels.end()) throw ConfigError(fmt::format("channel {} not in {}", channel, config_path));
    rules = it->alert_rules;
  }
  std::cout << report::to_json(report::report_channel(data_dir, channel, window, rules));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  // stdout carries machine-readable output only.
  spdlog::set_default_logger(spdlog::stderr_color_mt("incubator"));

  CLI::App app{"Neonatal incubator monitoring: telemetry service, device simulator, replay and reports"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<int> port;
  auto* serve = app.add_subcommand("serve", "Run the ingest service");
  serve->add_option("--config", config_path, "Server config JSON")->required();
  serve->add_option("--port", port, "Override the configured port");

  auto* device = app.add_subcommand("device", "Run one device agent against a server");
  device->add_option("--config", config_path, "Agent config JSON")->required();

  auto* all_in_one = app.add_subcommand("all-in-one", "Embedded server plus agents; exits after the run");
  all_in_one->add_option("--config", config_path, "All-in-one config JSON")->required();

  std::string log_path, server_url, write_key;
  std::int64_t channel = 1;
  auto* replay = app.add_subcommand("replay", "Re-post a recorded NDJSON log");
  replay->add_option("--log", log_path, "NDJSON log")->required();
  replay->add_option("--server", server_url, "Server URL, e.g. http://127.0.0.1:8080")->required();
  replay->add_option("--write-key", write_key, "Channel write key")->required();
  replay->add_option("--channel", channel, "Channel id");

  std::string data_dir;
  double window = 3600.0;
  std::string rules_config;
  auto* report_cmd = app.add_subcommand("report", "Summarize a channel log as JSON");
  report_cmd->add_option("--data-dir", data_dir, "Server data directory")->required();
  report_cmd->add_option("--channel", channel, "Channel id")->required();
  report_cmd->add_option("--window", window, "Window in seconds")->required();
  report_cmd->add_option("--config", rules_config, "Server config supplying the alert rules");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return kExitConfig;
  }

  try {
    if (*serve) return run_serve(config_path, port);
    if (*device) return run_device(config_path);
    if (*all_in_one) return run_all_in_one(config_path);
    if (*replay) return run_replay(log_path, server_url, write_key, channel);
    if (*report_cmd) return run_report(data_dir, channel, window, rules_config);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}
