#include "incubator/plant.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "incubator/error.hpp"

namespace incubator::plant {

namespace {

void require_finite(double v, std::string_view what) {
  if (!std::isfinite(v)) throw ValidationError(fmt::format("{} must be finite", what));
}

void require_positive(double v, std::string_view what) {
  require_finite(v, what);
  if (v <= 0.0) throw ValidationError(fmt::format("{} must be positive", what));
}

void require_non_negative(double v, std::string_view what) {
  require_finite(v, what);
  if (v < 0.0) throw ValidationError(fmt::format("{} must be non-negative", what));
}

void require_fraction(double v, std::string_view what) {
  require_finite(v, what);
  if (v < 0.0 || v > 1.0) throw ValidationError(fmt::format("{} must lie in [0, 1]", what));
}

template <typename T>
void read_opt(const nlohmann::json& doc, const char* key, T& out) {
  if (!doc.contains(key)) return;
  try {
    out = doc.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("bad value for '{}': {}", key, e.what()));
  }
}

}  // namespace

SensorModelConfig SensorModelConfig::noiseless() const {
  SensorModelConfig cfg = *this;
  cfg.temp_noise_sd = 0.0;
  cfg.rh_noise_sd = 0.0;
  cfg.hr_noise_sd = 0.0;
  cfg.gas_noise_sd = 0.0;
  cfg.light_noise_sd = 0.0;
  return cfg;
}

PlantState initial_state(const PlantParams& params) {
  PlantState state;
  state.t = 0.0;
  state.air_temp_c = params.ambient_temp_c;
  state.skin_temp_c = 37.0;
  state.rh_pct = params.ambient_rh_pct;
  state.gas_adc = params.gas_baseline_adc;
  state.light_lux = params.light_baseline_lux;
  state.hr_baseline_bpm = params.hr_baseline_bpm;
  return state;
}

void validate(const PlantParams& p) {
  require_non_negative(p.heater_power_w, "heater_power_w");
  require_positive(p.air_heat_capacity, "air_heat_capacity");
  require_positive(p.loss_conductance, "loss_conductance");
  require_positive(p.infant_conductance, "infant_conductance");
  require_positive(p.infant_heat_capacity, "infant_heat_capacity");
  require_finite(p.metabolic_heat_w, "metabolic_heat_w");
  require_finite(p.ambient_temp_c, "ambient_temp_c");
  require_finite(p.ambient_rh_pct, "ambient_rh_pct");
  if (p.ambient_rh_pct < 0.0 || p.ambient_rh_pct > 100.0) {
    throw ValidationError("ambient_rh_pct must lie in [0, 100]");
  }
  require_positive(p.rh_time_constant_s, "rh_time_constant_s");
  require_non_negative(p.humidifier_gain, "humidifier_gain");
  require_non_negative(p.gas_baseline_adc, "gas_baseline_adc");
  require_non_negative(p.light_baseline_lux, "light_baseline_lux");
  require_positive(p.hr_baseline_bpm, "hr_baseline_bpm");
}

void validate(const PlantState& s) {
  require_finite(s.t, "t");
  require_finite(s.air_temp_c, "air_temp_c");
  require_finite(s.skin_temp_c, "skin_temp_c");
  require_finite(s.rh_pct, "rh_pct");
  if (s.rh_pct < 0.0 || s.rh_pct > 100.0) throw ValidationError("rh_pct must lie in [0, 100]");
  require_finite(s.gas_adc, "gas_adc");
  if (s.gas_adc < 0.0 || s.gas_adc > 1023.0) throw ValidationError("gas_adc must lie in [0, 1023]");
  require_non_negative(s.light_lux, "light_lux");
  require_positive(s.hr_baseline_bpm, "hr_baseline_bpm");
}

void validate(const SensorModelConfig& c) {
  require_positive(c.sample_period_s, "sample_period_s");
  require_positive(c.temp_quantum_c, "temp_quantum_c");
  require_positive(c.rh_quantum_pct, "rh_quantum_pct");
  require_non_negative(c.temp_noise_sd, "temp_noise_sd");
  require_non_negative(c.rh_noise_sd, "rh_noise_sd");
  require_non_negative(c.hr_noise_sd, "hr_noise_sd");
  require_non_negative(c.gas_noise_sd, "gas_noise_sd");
  require_non_negative(c.light_noise_sd, "light_noise_sd");
  require_non_negative(c.hr_variability_bpm, "hr_variability_bpm");
  require_positive(c.hr_variability_period_s, "hr_variability_period_s");
}

PlantState step_plant(const PlantState& s, const PlantParams& p, double heater_duty,
                      double humidifier_duty, double dt) {
  validate(s);
  validate(p);
  require_fraction(heater_duty, "heater_duty");
  require_fraction(humidifier_duty, "humidifier_duty");
  require_finite(dt, "dt");
  if (dt <= 0.0) throw ValidationError("dt must be positive");

  const double air_to_skin = p.infant_conductance * (s.air_temp_c - s.skin_temp_c);
  const double air_flux =
      heater_duty * p.heater_power_w - p.loss_conductance * (s.air_temp_c - p.ambient_temp_c) - air_to_skin;
  const double skin_flux = p.metabolic_heat_w + air_to_skin;
  const double rh_rate = humidifier_duty * p.humidifier_gain - (s.rh_pct - p.ambient_rh_pct) / p.rh_time_constant_s;

  PlantState next = s;
  next.t = s.t + dt;
  next.air_temp_c = s.air_temp_c + dt * air_flux / p.air_heat_capacity;
  next.skin_temp_c = s.skin_temp_c + dt * skin_flux / p.infant_heat_capacity;
  next.rh_pct = std::clamp(s.rh_pct + dt * rh_rate, 0.0, 100.0);
  return next;
}

SteadyTemperatures steady_state(const PlantParams& p, double heater_duty) {
  validate(p);
  require_fraction(heater_duty, "heater_duty");
  const double air = p.ambient_temp_c + (heater_duty * p.heater_power_w + p.metabolic_heat_w) / p.loss_conductance;
  return {air, air + p.metabolic_heat_w / p.infant_conductance};
}

double steady_duty_for_air(const PlantParams& p, double air_temp_c) {
  validate(p);
  if (p.heater_power_w == 0.0) throw ValidationError("heater_power_w is zero");
  return (p.loss_conductance * (air_temp_c - p.ambient_temp_c) - p.metabolic_heat_w) / p.heater_power_w;
}

std::pair<PlantState, PlantParams> apply_events(const PlantState& state, const PlantParams& baseline,
                                                const Scenario& script, double t) {
  PlantState out = state;
  PlantParams params = baseline;
  out.gas_adc = baseline.gas_baseline_adc;
  out.light_lux = baseline.light_baseline_lux;
  out.hr_baseline_bpm = baseline.hr_baseline_bpm;
  params.heater_override = HeaterOverride::none;

  for (const auto& ev : script) {
    if (!ev.active_at(t)) continue;
    switch (ev.kind) {
      case EventKind::gas_leak: {
        const double progress = std::min(1.0, (t - ev.at_s) / kGasRampSeconds);
        out.gas_adc = std::clamp(baseline.gas_baseline_adc + (ev.magnitude - baseline.gas_baseline_adc) * progress,
                                 0.0, 1023.0);
        break;
      }
      case EventKind::door_open:
        params.loss_conductance += ev.magnitude;
        break;
      case EventKind::heater_stuck_on:
        params.heater_override = HeaterOverride::stuck_on;
        break;
      case EventKind::heater_stuck_off:
        params.heater_override = HeaterOverride::stuck_off;
        break;
      case EventKind::bradycardia:
        out.hr_baseline_bpm = ev.magnitude;
        break;
      case EventKind::phototherapy_light:
        out.light_lux = std::max(0.0, ev.magnitude);
        break;
    }
  }
  return {out, params};
}

double quantize(double value, double quantum) { return std::round(value / quantum) * quantum; }

SensorFrame sample_sensors(const PlantState& state, const SensorModelConfig& cfg, SensorNoise& noise) {
  // Fixed draw order: air, rh, hr, gas, light, skin.
  const double n_air = noise.standard_normal();
  const double n_rh = noise.standard_normal();
  const double n_hr = noise.standard_normal();
  const double n_gas = noise.standard_normal();
  const double n_light = noise.standard_normal();
  const double n_skin = noise.standard_normal();

  constexpr double kTwoPi = 6.283185307179586;
  const double hr = state.hr_baseline_bpm +
                    cfg.hr_variability_bpm * std::sin(kTwoPi * state.t / cfg.hr_variability_period_s) +
                    cfg.hr_noise_sd * n_hr;

  SensorFrame f;
  f.created_at = Timestamp{static_cast<std::int64_t>(std::floor(state.t))};
  f.air_temp_c = quantize(state.air_temp_c + cfg.temp_noise_sd * n_air, cfg.temp_quantum_c);
  f.rh_pct = std::clamp(quantize(state.rh_pct + cfg.rh_noise_sd * n_rh, cfg.rh_quantum_pct), 0.0, 100.0);
  f.pulse_bpm = static_cast<int>(std::max(0.0, std::round(hr)));
  f.gas_adc = static_cast<int>(std::round(std::clamp(state.gas_adc + cfg.gas_noise_sd * n_gas, 0.0, 1023.0)));
  f.light_lux = static_cast<int>(std::round(std::max(0.0, state.light_lux + cfg.light_noise_sd * n_light)));
  f.skin_temp_c = quantize(state.skin_temp_c + cfg.temp_noise_sd * n_skin, cfg.temp_quantum_c);
  return f;
}

EventKind parse_event_kind(std::string_view name) {
  if (name == "gas_leak") return EventKind::gas_leak;
  if (name == "door_open") return EventKind::door_open;
  if (name == "heater_stuck_on") return EventKind::heater_stuck_on;
  if (name == "heater_stuck_off") return EventKind::heater_stuck_off;
  if (name == "bradycardia") return EventKind::bradycardia;
  if (name == "phototherapy_light") return EventKind::phototherapy_light;
  throw ConfigError(fmt::format("unknown scenario event kind '{}'", name));
}

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::gas_leak: return "gas_leak";
    case EventKind::door_open: return "door_open";
    case EventKind::heater_stuck_on: return "heater_stuck_on";
    case EventKind::heater_stuck_off: return "heater_stuck_off";
    case EventKind::bradycardia: return "bradycardia";
    case EventKind::phototherapy_light: return "phototherapy_light";
  }
  return "unknown";
}

Scenario parse_scenario(const nlohmann::json& doc) {
  if (!doc.is_array()) throw ConfigError("scenario must be a JSON array");
  Scenario script;
  script.reserve(doc.size());
  for (const auto& rec : doc) {
    if (!rec.is_object()) throw ConfigError("scenario event must be an object");
    if (!rec.contains("at_s") || !rec.contains("kind")) throw ConfigError("scenario event needs at_s and kind");
    ScenarioEvent ev;
    std::string kind;
    read_opt(rec, "at_s", ev.at_s);
    read_opt(rec, "kind", kind);
    read_opt(rec, "magnitude", ev.magnitude);
    read_opt(rec, "duration_s", ev.duration_s);
    ev.kind = parse_event_kind(kind);
    if (!std::isfinite(ev.at_s) || ev.at_s < 0.0) throw ConfigError("scenario at_s must be >= 0");
    if (!std::isfinite(ev.duration_s) || ev.duration_s < 0.0) throw ConfigError("scenario duration_s must be >= 0");
    if (!std::isfinite(ev.magnitude)) throw ConfigError("scenario magnitude must be finite");
    script.push_back(ev);
  }
  std::stable_sort(script.begin(), script.end(),
                   [](const ScenarioEvent& a, const ScenarioEvent& b) { return a.at_s < b.at_s; });
  return script;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open scenario file {}", path.string()));
  try {
    return parse_scenario(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(fmt::format("scenario file {}: {}", path.string(), e.what()));
  }
}

PlantParams parse_plant_params(const nlohmann::json& doc) {
  PlantParams p;
  if (doc.is_null()) return p;
  read_opt(doc, "heater_power_w", p.heater_power_w);
  read_opt(doc, "air_heat_capacity", p.air_heat_capacity);
  read_opt(doc, "loss_conductance", p.loss_conductance);
  read_opt(doc, "infant_conductance", p.infant_conductance);
  read_opt(doc, "infant_heat_capacity", p.infant_heat_capacity);
  read_opt(doc, "metabolic_heat_w", p.metabolic_heat_w);
  read_opt(doc, "ambient_temp_c", p.ambient_temp_c);
  read_opt(doc, "ambient_rh_pct", p.ambient_rh_pct);
  read_opt(doc, "rh_time_constant_s", p.rh_time_constant_s);
  read_opt(doc, "humidifier_gain", p.humidifier_gain);
  read_opt(doc, "gas_baseline_adc", p.gas_baseline_adc);
  read_opt(doc, "light_baseline_lux", p.light_baseline_lux);
  read_opt(doc, "hr_baseline_bpm", p.hr_baseline_bpm);
  try {
    validate(p);
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  return p;
}

PlantState parse_plant_state(const nlohmann::json& doc, const PlantParams& params) {
  PlantState s = initial_state(params);
  if (doc.is_null()) return s;
  read_opt(doc, "air_temp_c", s.air_temp_c);
  read_opt(doc, "skin_temp_c", s.skin_temp_c);
  read_opt(doc, "rh_pct", s.rh_pct);
  try {
    validate(s);
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  return s;
}

SensorModelConfig parse_sensor_config(const nlohmann::json& doc) {
  SensorModelConfig c;
  if (doc.is_null()) return c;
  read_opt(doc, "sample_period_s", c.sample_period_s);
  read_opt(doc, "temp_quantum_c", c.temp_quantum_c);
  read_opt(doc, "rh_quantum_pct", c.rh_quantum_pct);
  read_opt(doc, "temp_noise_sd", c.temp_noise_sd);
  read_opt(doc, "rh_noise_sd", c.rh_noise_sd);
  read_opt(doc, "hr_noise_sd", c.hr_noise_sd);
  read_opt(doc, "gas_noise_sd", c.gas_noise_sd);
  read_opt(doc, "light_noise_sd", c.light_noise_sd);
  read_opt(doc, "hr_variability_bpm", c.hr_variability_bpm);
  read_opt(doc, "hr_variability_period_s", c.hr_variability_period_s);
  read_opt(doc, "rng_seed", c.rng_seed);
  try {
    validate(c);
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  return c;
}

}  // namespace incubator::plant
