#pragma once

#include <json.hpp>

namespace incubator::control {

enum class Mode { onoff, pid };
enum class Servo { air, skin };

struct ControllerConfig {
  Mode mode = Mode::onoff;
  Servo servo = Servo::air;
  double setpoint_c = 35.0;
  double hysteresis_c = 0.6;  // full deadband width, centred on the setpoint
  double kp = 0.8;
  double ki = 0.005;
  double kd = 10.0;
};

struct ControllerState {
  double prev_output = 0.0;
  double integral = 0.0;
  double prev_error = 0.0;
  bool initialized = false;
};

struct StepResult {
  double duty = 0.0;
  ControllerState state;
  bool sensor_fault = false;  // measurement was non-finite; output held
};

void validate(const ControllerConfig& cfg);

/// Bang-bang law with a symmetric deadband. Switches on strictly below
/// setpoint - hysteresis/2 and off strictly above setpoint + hysteresis/2.
StepResult onoff_step(double measured, double setpoint, double hysteresis, const ControllerState& st);
StepResult onoff_step(double measured, const ControllerConfig& cfg, const ControllerState& st);

/// Positional PID with output clamped to [0, 1] and conditional integration.
StepResult pid_step(double measured, const ControllerConfig& cfg, const ControllerState& st, double dt);

/// Dispatches on cfg.mode.
StepResult controller_step(double measured, const ControllerConfig& cfg, const ControllerState& st, double dt);

/// Humidifier loop: on-off on relative humidity.
struct HumidifierConfig {
  double setpoint_pct = 55.0;
  double hysteresis_pct = 4.0;
};

Mode parse_mode(std::string_view text);
Servo parse_servo(std::string_view text);
std::string_view to_string(Mode mode);
std::string_view to_string(Servo servo);

ControllerConfig parse_controller_config(const nlohmann::json& doc);
HumidifierConfig parse_humidifier_config(const nlohmann::json& doc);

}  // namespace incubator::control
