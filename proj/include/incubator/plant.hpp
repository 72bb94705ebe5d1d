#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "incubator/sensor_frame.hpp"

namespace incubator::plant {

enum class HeaterOverride { none, stuck_on, stuck_off };

/// Two-node (air, infant) lumped thermal model plus humidity relaxation.
struct PlantParams {
  double heater_power_w = 150.0;
  double air_heat_capacity = 4000.0;    // J/K
  double loss_conductance = 5.0;        // W/K, air to ambient
  double infant_conductance = 1.5;      // W/K, air to skin
  double infant_heat_capacity = 10000.0;  // J/K
  double metabolic_heat_w = 3.0;
  double ambient_temp_c = 24.0;
  double ambient_rh_pct = 45.0;
  double rh_time_constant_s = 600.0;
  double humidifier_gain = 0.05;  // %RH/s at full duty

  // Resting values restored whenever no fault event is active.
  double gas_baseline_adc = 120.0;
  double light_baseline_lux = 200.0;
  double hr_baseline_bpm = 130.0;

  // Set by heater_stuck_* events; the device agent honours it over the controller.
  HeaterOverride heater_override = HeaterOverride::none;
};

struct PlantState {
  double t = 0.0;
  double air_temp_c = 24.0;
  double skin_temp_c = 37.0;
  double rh_pct = 45.0;
  double gas_adc = 120.0;
  double light_lux = 200.0;
  double hr_baseline_bpm = 130.0;
};

enum class EventKind { gas_leak, door_open, heater_stuck_on, heater_stuck_off, bradycardia, phototherapy_light };

struct ScenarioEvent {
  double at_s = 0.0;
  EventKind kind = EventKind::gas_leak;
  double magnitude = 0.0;
  double duration_s = 0.0;  // 0 means the event never expires

  bool active_at(double t) const { return t >= at_s && (duration_s == 0.0 || t < at_s + duration_s); }
};

using Scenario = std::vector<ScenarioEvent>;

/// Gas leaks ramp linearly from baseline to their magnitude over this span.
inline constexpr double kGasRampSeconds = 30.0;

struct SensorModelConfig {
  double sample_period_s = 1.0;
  double temp_quantum_c = 0.1;
  double rh_quantum_pct = 0.1;
  double temp_noise_sd = 0.05;
  double rh_noise_sd = 0.5;
  double hr_noise_sd = 2.0;
  double gas_noise_sd = 10.0;
  double light_noise_sd = 20.0;
  double hr_variability_bpm = 5.0;
  double hr_variability_period_s = 60.0;
  std::uint64_t rng_seed = 1;

  /// Same configuration with every noise term zeroed.
  SensorModelConfig noiseless() const;
};

/// Seeded noise source. Every frame draws the same number of variates,
/// so a given seed yields one fixed sequence whatever the SDs are.
class SensorNoise {
 public:
  explicit SensorNoise(std::uint64_t seed) : engine_(seed) {}

  double standard_normal() { return normal_(engine_); }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Cold incubator (air and humidity at ambient) holding a normothermic neonate.
PlantState initial_state(const PlantParams& params);

void validate(const PlantParams& params);
void validate(const PlantState& state);
void validate(const SensorModelConfig& cfg);

/// Explicit Euler step of the thermal and humidity dynamics.
/// Gas, light and heart-rate baseline pass through unchanged.
PlantState step_plant(const PlantState& state, const PlantParams& params, double heater_duty,
                      double humidifier_duty, double dt);

struct SteadyTemperatures {
  double air_temp_c;
  double skin_temp_c;
};

/// Analytic fixed point of step_plant for a constant heater duty.
SteadyTemperatures steady_state(const PlantParams& params, double heater_duty);

/// Constant heater duty whose fixed point puts the air at `air_temp_c`.
double steady_duty_for_air(const PlantParams& params, double air_temp_c);

/// Evaluates the fault script at time `t` against the baseline parameters.
/// Returns the state with gas/light/heart-rate fields set and the effective
/// parameters (door conductance, heater override) that apply at `t`.
std::pair<PlantState, PlantParams> apply_events(const PlantState& state, const PlantParams& baseline,
                                                const Scenario& script, double t);

/// Quantized noisy reading of `state`. created_at carries state.t as whole
/// seconds from the Unix epoch; callers rebase it onto their own clock.
SensorFrame sample_sensors(const PlantState& state, const SensorModelConfig& cfg, SensorNoise& noise);

/// Rounds to the nearest multiple of `quantum`, ties away from zero.
double quantize(double value, double quantum);

EventKind parse_event_kind(std::string_view name);
std::string_view to_string(EventKind kind);

/// Parses a JSON array of {"at_s","kind","magnitude","duration_s"} records and
/// sorts it by at_s. Throws ConfigError on unknown kinds or bad fields.
Scenario parse_scenario(const nlohmann::json& doc);
Scenario load_scenario(const std::filesystem::path& path);

PlantParams parse_plant_params(const nlohmann::json& doc);
PlantState parse_plant_state(const nlohmann::json& doc, const PlantParams& params);
SensorModelConfig parse_sensor_config(const nlohmann::json& doc);

}  // namespace incubator::plant
