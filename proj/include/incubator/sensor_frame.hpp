#pragma once

#include "incubator/time.hpp"

namespace incubator {

/// One reading of every channel on the terminal device.
struct SensorFrame {
  Timestamp created_at;
  double air_temp_c = 0.0;
  double rh_pct = 0.0;
  int pulse_bpm = 0;
  int gas_adc = 0;
  int light_lux = 0;
  double skin_temp_c = 0.0;
  double heater_duty = 0.0;
};

}  // namespace incubator
