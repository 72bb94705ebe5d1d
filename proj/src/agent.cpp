#include "incubator/agent.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <thread>

#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "incubator/error.hpp"
#include "incubator/ingest.hpp"
#include "incubator/store.hpp"

namespace incubator::agent {

namespace {

constexpr int kMaxCommandsPerPoll = 16;

class LocalLog {
 public:
  explicit LocalLog(const std::filesystem::path& path) : path_(path) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw StorageError(fmt::format("cannot open local log {}", path.string()));
  }

  void write(const SensorFrame& frame) {
    wire::FeedEntry entry{++count_, frame.created_at, wire::frame_fields(frame)};
    out_ << wire::encode_feed_entry(entry) << '\n';
    out_.flush();
    if (!out_) throw StorageError(fmt::format("write to local log {} failed", path_.string()));
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::int64_t count_ = 0;
};

PostOutcome outcome_from(const ingest::Response& r) {
  PostOutcome out;
  out.status = r.status;
  if (r.status == 200) {
    out.kind = PostOutcome::Kind::accepted;
    out.entry_id = std::stoll(r.body);
  } else {
    out.kind = PostOutcome::Kind::rejected;
  }
  return out;
}

double read_reading(const SensorFrame& frame, control::Servo servo) {
  return servo == control::Servo::air ? frame.air_temp_c : frame.skin_temp_c;
}

}  // namespace

void validate(const AgentConfig& cfg) {
  if (!(cfg.dt_s > 0.0) || !std::isfinite(cfg.dt_s)) throw ConfigError("dt_s must be positive");
  if (!(cfg.duration_s > 0.0) || !std::isfinite(cfg.duration_s)) throw ConfigError("duration_s must be positive");
  if (cfg.command_poll_every_n_ticks < 1) throw ConfigError("command_poll_every_n_ticks must be >= 1");
  if (cfg.write_key.empty()) throw ConfigError("write_key must not be empty");
  if (cfg.buffer_capacity < 1) throw ConfigError("buffer_capacity must be >= 1");
  try {
    control::validate(cfg.controller);
    plant::validate(cfg.plant);
    plant::validate(cfg.sensors);
    if (cfg.initial_state) plant::validate(*cfg.initial_state);
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
}

AgentConfig parse_agent_config(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  AgentConfig cfg;
  try {
    if (!doc.is_object()) throw ConfigError("agent config must be a JSON object");
    cfg.server_url = doc.value("server_url", cfg.server_url);
    cfg.channel_id = doc.value("channel_id", cfg.channel_id);
    cfg.write_key = doc.value("write_key", cfg.write_key);
    cfg.dt_s = doc.value("dt_s", cfg.dt_s);
    cfg.duration_s = doc.value("duration_s", cfg.duration_s);
    cfg.controller = control::parse_controller_config(doc.value("controller", nlohmann::json()));
    cfg.humidifier = control::parse_humidifier_config(doc.value("humidifier", nlohmann::json()));
    cfg.sensors = plant::parse_sensor_config(doc.value("sensors", nlohmann::json()));
    cfg.plant = plant::parse_plant_params(doc.value("plant", nlohmann::json()));
    if (doc.contains("initial_state")) cfg.initial_state = plant::parse_plant_state(doc.at("initial_state"), cfg.plant);
    if (doc.contains("seed")) cfg.seed = doc.at("seed").get<std::uint64_t>();
    else cfg.seed = cfg.sensors.rng_seed;
    cfg.sensors.rng_seed = cfg.seed;
    if (doc.contains("scenario")) cfg.scenario = plant::parse_scenario(doc.at("scenario"));
    if (doc.contains("scenario_file")) {
      std::filesystem::path p = doc.at("scenario_file").get<std::string>();
      if (p.is_relative()) p = base_dir / p;
      cfg.scenario = plant::load_scenario(p);
    }
    const std::string clock = doc.value("clock", std::string("simulated"));
    if (clock == "simulated") cfg.clock = ClockMode::simulated;
    else if (clock == "realtime") cfg.clock = ClockMode::realtime;
    else throw ConfigError(fmt::format("clock must be simulated or realtime, got '{}'", clock));
    cfg.command_poll_every_n_ticks = doc.value("command_poll_every_n_ticks", cfg.command_poll_every_n_ticks);
    if (doc.contains("start_time")) {
      const auto ts = parse_iso8601(doc.at("start_time").get<std::string>());
      if (!ts) throw ConfigError("start_time must be YYYY-MM-DDTHH:MM:SSZ");
      cfg.start_time = *ts;
    }
    if (doc.contains("local_log") && !doc.at("local_log").is_null()) {
      cfg.local_log = std::filesystem::path(doc.at("local_log").get<std::string>());
    }
    cfg.buffer_capacity = doc.value("buffer_capacity", cfg.buffer_capacity);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("agent config: {}", e.what()));
  }
  return cfg;
}

AgentConfig load_agent_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config {}", path.string()));
  try {
    auto cfg = parse_agent_config(nlohmann::json::parse(in), path.parent_path());
    validate(cfg);
    return cfg;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(fmt::format("config {}: {}", path.string(), e.what()));
  }
}

HttpTransport::HttpTransport(const std::string& server_url, std::int64_t channel_id, std::string write_key)
    : client_(std::make_unique<httplib::Client>(server_url)),
      poll_path_(fmt::format("/channels/{}/commands/next?api_key={}", channel_id, wire::percent_encode(write_key))) {
  client_->set_connection_timeout(2, 0);
  client_->set_read_timeout(5, 0);
  client_->set_write_timeout(5, 0);
  client_->set_keep_alive(true);
  client_->set_tcp_nodelay(true);
}

HttpTransport::~HttpTransport() = default;

PostOutcome HttpTransport::post_update(const wire::HttpRequestSpec& request) {
  const auto res = client_->Post(request.path, request.body, "application/x-www-form-urlencoded");
  if (!res) return {PostOutcome::Kind::unreachable, 0, 0};
  return outcome_from({res->status, res->body, ""});
}

PollOutcome HttpTransport::poll_command() {
  const auto res = client_->Get(poll_path_);
  if (!res) return {false, std::nullopt};
  if (res->status != 200) return {true, std::nullopt};
  try {
    return {true, wire::command_from_json(nlohmann::json::parse(res->body))};
  } catch (const std::exception& e) {
    spdlog::warn("ignoring malformed command response: {}", e.what());
    return {true, std::nullopt};
  }
}

InProcessTransport::InProcessTransport(ingest::Service& service, std::int64_t channel_id, std::string write_key)
    : service_(service), channel_id_(channel_id), write_key_(std::move(write_key)) {}

PostOutcome InProcessTransport::post_update(const wire::HttpRequestSpec& request) {
  return outcome_from(service_.handle_update(request.body));
}

PollOutcome InProcessTransport::poll_command() {
  const auto r = service_.poll_command(channel_id_, write_key_);
  if (r.status != 200) return {true, std::nullopt};
  return {true, wire::command_from_json(nlohmann::json::parse(r.body))};
}

bool apply_command(std::string_view body, control::ControllerConfig& controller,
                   control::HumidifierConfig& humidifier) {
  wire::CommandSettings s;
  try {
    s = wire::parse_command_body(body);
  } catch (const ValidationError& e) {
    spdlog::warn("rejecting command '{}': {}", body, e.what());
    return false;
  }
  if (s.setpoint_c) controller.setpoint_c = *s.setpoint_c;
  if (s.servo) controller.servo = *s.servo;
  if (s.mode) controller.mode = *s.mode;
  if (s.hum_setpoint_pct) humidifier.setpoint_pct = *s.hum_setpoint_pct;
  return true;
}

RunSummary run_agent(const AgentConfig& cfg, Transport& transport, const TickObserver& observer) {
  validate(cfg);

  std::optional<LocalLog> local_log;
  if (cfg.local_log) local_log.emplace(*cfg.local_log);

  const bool realtime = cfg.clock == ClockMode::realtime;
  const Timestamp origin = realtime ? now_utc() : cfg.start_time;
  const auto wall_start = std::chrono::steady_clock::now();

  plant::SensorModelConfig sensors = cfg.sensors;
  sensors.rng_seed = cfg.seed;
  plant::SensorNoise noise(sensors.rng_seed);
  plant::PlantState state = cfg.initial_state.value_or(plant::initial_state(cfg.plant));

  control::ControllerConfig controller = cfg.controller;
  control::HumidifierConfig humidifier = cfg.humidifier;
  control::ControllerState heater_state;
  control::ControllerState hum_state;

  // Reading available to the controller on the first tick.
  SensorFrame last_frame = plant::sample_sensors(state, sensors, noise);

  std::deque<wire::HttpRequestSpec> pending;
  RunSummary summary;
  const int ticks = static_cast<int>(std::floor(cfg.duration_s / cfg.dt_s + 1e-9));

  for (int tick = 1; tick <= ticks; ++tick) {
    const auto [evented, effective] = plant::apply_events(state, cfg.plant, cfg.scenario, state.t);

    const auto heater = control::controller_step(read_reading(last_frame, controller.servo), controller,
                                                 heater_state, cfg.dt_s);
    heater_state = heater.state;
    if (heater.sensor_fault) ++summary.sensor_faults;
    double duty = heater.duty;
    if (effective.heater_override == plant::HeaterOverride::stuck_on) duty = 1.0;
    if (effective.heater_override == plant::HeaterOverride::stuck_off) duty = 0.0;

    const auto hum = control::onoff_step(last_frame.rh_pct, humidifier.setpoint_pct, humidifier.hysteresis_pct,
                                         hum_state);
    hum_state = hum.state;

    state = plant::step_plant(evented, effective, duty, hum.duty, cfg.dt_s);
    SensorFrame frame = plant::sample_sensors(state, sensors, noise);
    frame.created_at = Timestamp{origin.seconds + frame.created_at.seconds};
    frame.heater_duty = duty;
    last_frame = frame;

    if (local_log) local_log->write(frame);

    pending.push_back(wire::encode_update(frame, cfg.write_key));
    while (pending.size() > cfg.buffer_capacity) {
      pending.pop_front();
      ++summary.dropped;
    }
    while (!pending.empty()) {
      const auto outcome = transport.post_update(pending.front());
      if (outcome.kind == PostOutcome::Kind::unreachable) break;
      if (outcome.kind == PostOutcome::Kind::accepted) ++summary.accepted;
      else ++summary.rejected;
      pending.pop_front();
    }

    if (tick % cfg.command_poll_every_n_ticks == 0) {
      for (int i = 0; i < kMaxCommandsPerPoll; ++i) {
        const auto polled = transport.poll_command();
        if (!polled.reachable || !polled.command) break;
        const auto previous_mode = controller.mode;
        AppliedCommand applied{polled.command->command_id, tick, polled.command->body, false};
        applied.applied = apply_command(polled.command->body, controller, humidifier);
        if (controller.mode != previous_mode) heater_state = {};
        summary.commands.push_back(std::move(applied));
      }
    }

    summary.ticks = tick;
    if (observer) observer(TickRecord{tick, state, frame, duty, hum.duty, controller});

    if (realtime) {
      std::this_thread::sleep_until(wall_start + std::chrono::duration<double>(tick * cfg.dt_s));
    }
  }

  summary.unsent = static_cast<int>(pending.size());
  summary.final_state = state;
  summary.final_controller = controller;
  return summary;
}

void write_local_log(const std::vector<SensorFrame>& frames, const std::filesystem::path& path) {
  LocalLog log(path);
  for (const auto& f : frames) log.write(f);
}

nlohmann::ordered_json summary_to_json(const RunSummary& s) {
  nlohmann::ordered_json j;
  j["ticks"] = s.ticks;
  j["accepted"] = s.accepted;
  j["rejected"] = s.rejected;
  j["dropped"] = s.dropped;
  j["unsent"] = s.unsent;
  j["sensor_faults"] = s.sensor_faults;
  j["final_state"] = {
      {"t", s.final_state.t},
      {"air_temp_c", s.final_state.air_temp_c},
      {"skin_temp_c", s.final_state.skin_temp_c},
      {"rh_pct", s.final_state.rh_pct},
      {"gas_adc", s.final_state.gas_adc},
      {"light_lux", s.final_state.light_lux},
      {"hr_baseline_bpm", s.final_state.hr_baseline_bpm},
  };
  j["controller"] = {
      {"mode", control::to_string(s.final_controller.mode)},
      {"servo", control::to_string(s.final_controller.servo)},
      {"setpoint_c", s.final_controller.setpoint_c},
  };
  j["commands"] = nlohmann::ordered_json::array();
  for (const auto& c : s.commands) {
    j["commands"].push_back({{"command_id", c.command_id}, {"tick", c.tick}, {"body", c.body}, {"applied", c.applied}});
  }
  return j;
}

ReplaySummary replay_log(const std::filesystem::path& path, std::string_view write_key, Transport& transport) {
  ReplaySummary summary;
  for (const auto& entry : store::read_log(path)) {
    ++summary.records;
    const auto outcome = transport.post_update(wire::encode_entry_update(entry, write_key));
    switch (outcome.kind) {
      case PostOutcome::Kind::accepted: ++summary.accepted; break;
      case PostOutcome::Kind::rejected: ++summary.rejected; break;
      case PostOutcome::Kind::unreachable: ++summary.unreachable; break;
    }
  }
  return summary;
}

}  // namespace incubator::agent
