#include "incubator/control.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <fmt/format.h>

#include "incubator/error.hpp"

namespace incubator::control {

void validate(const ControllerConfig& cfg) {
  if (!std::isfinite(cfg.setpoint_c)) throw ValidationError("setpoint must be finite");
  if (cfg.mode == Mode::onoff && !(cfg.hysteresis_c > 0.0 && std::isfinite(cfg.hysteresis_c))) {
    throw ValidationError("on-off hysteresis must be positive");
  }
  if (cfg.mode == Mode::pid) {
    for (double g : {cfg.kp, cfg.ki, cfg.kd}) {
      if (!(g >= 0.0 && std::isfinite(g))) throw ValidationError("PID gains must be finite and non-negative");
    }
  }
}

StepResult onoff_step(double measured, double setpoint, double hysteresis, const ControllerState& st) {
  const double held = st.initialized ? st.prev_output : 0.0;
  StepResult r;
  r.state = st;
  r.state.initialized = true;
  if (!std::isfinite(measured)) {
    r.duty = held;
    r.sensor_fault = true;
    r.state.prev_output = held;
    return r;
  }
  const double half = hysteresis / 2.0;
  if (measured < setpoint - half) {
    r.duty = 1.0;
  } else if (measured > setpoint + half) {
    r.duty = 0.0;
  } else {
    r.duty = held;
  }
  r.state.prev_output = r.duty;
  return r;
}

StepResult onoff_step(double measured, const ControllerConfig& cfg, const ControllerState& st) {
  return onoff_step(measured, cfg.setpoint_c, cfg.hysteresis_c, st);
}

StepResult pid_step(double measured, const ControllerConfig& cfg, const ControllerState& st, double dt) {
  if (!(dt > 0.0)) throw ValidationError("dt must be positive");
  StepResult r;
  r.state = st;
  if (!std::isfinite(measured)) {
    r.duty = st.initialized ? st.prev_output : 0.0;
    r.sensor_fault = true;
    r.state.prev_output = r.duty;
    r.state.initialized = true;
    return r;
  }

  const double error = cfg.setpoint_c - measured;
  const double derivative = st.initialized ? (error - st.prev_error) / dt : 0.0;
  const double raw = cfg.kp * error + cfg.ki * st.integral + cfg.kd * derivative;
  const double duty = std::clamp(raw, 0.0, 1.0);

  // Integrate only while unsaturated, or when the error pulls the output back in range.
  const bool saturated_high = raw > 1.0;
  const bool saturated_low = raw < 0.0;
  const bool unwinding = (saturated_high && error < 0.0) || (saturated_low && error > 0.0);
  if ((!saturated_high && !saturated_low) || unwinding) r.state.integral = st.integral + error * dt;

  r.duty = duty;
  r.state.prev_error = error;
  r.state.prev_output = duty;
  r.state.initialized = true;
  return r;
}

StepResult controller_step(double measured, const ControllerConfig& cfg, const ControllerState& st, double dt) {
  return cfg.mode == Mode::onoff ? onoff_step(measured, cfg, st) : pid_step(measured, cfg, st, dt);
}

Mode parse_mode(std::string_view text) {
  if (text == "onoff") return Mode::onoff;
  if (text == "pid") return Mode::pid;
  throw ValidationError(fmt::format("mode must be onoff or pid, got '{}'", text));
}

Servo parse_servo(std::string_view text) {
  if (text == "air") return Servo::air;
  if (text == "skin") return Servo::skin;
  throw ValidationError(fmt::format("servo must be air or skin, got '{}'", text));
}

std::string_view to_string(Mode mode) { return mode == Mode::onoff ? "onoff" : "pid"; }
std::string_view to_string(Servo servo) { return servo == Servo::air ? "air" : "skin"; }

ControllerConfig parse_controller_config(const nlohmann::json& doc) {
  ControllerConfig cfg;
  if (doc.is_null()) return cfg;
  try {
    if (doc.contains("mode")) cfg.mode = parse_mode(doc.at("mode").get<std::string>());
    if (doc.contains("servo")) cfg.servo = parse_servo(doc.at("servo").get<std::string>());
    cfg.setpoint_c = doc.value("setpoint_c", cfg.setpoint_c);
    cfg.hysteresis_c = doc.value("hysteresis_c", cfg.hysteresis_c);
    cfg.kp = doc.value("kp", cfg.kp);
    cfg.ki = doc.value("ki", cfg.ki);
    cfg.kd = doc.value("kd", cfg.kd);
    validate(cfg);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("controller config: {}", e.what()));
  } catch (const ValidationError& e) {
    throw ConfigError(fmt::format("controller config: {}", e.what()));
  }
  return cfg;
}

HumidifierConfig parse_humidifier_config(const nlohmann::json& doc) {
  HumidifierConfig cfg;
  if (doc.is_null()) return cfg;
  try {
    cfg.setpoint_pct = doc.value("setpoint_pct", cfg.setpoint_pct);
    cfg.hysteresis_pct = doc.value("hysteresis_pct", cfg.hysteresis_pct);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("humidifier config: {}", e.what()));
  }
  if (!(cfg.hysteresis_pct > 0.0)) throw ConfigError("humidifier hysteresis must be positive");
  return cfg;
}

}  // namespace incubator::control
