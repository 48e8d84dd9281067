#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nilm/activations.hpp"
#include "nilm/errors.hpp"
#include "nilm/rng.hpp"
#include "nilm/series.hpp"

// Synthetic household generator.  Each appliance alternates between an off
// phase at its standby level and an on phase at a jittered rectangular level;
// phase lengths draw uniformly from configured ranges.  The aggregate channel
// is the sum of all appliances plus non-negative Gaussian meter noise.  The
// generator also reports exactly which sample intervals it switched each
// appliance on, so extraction code can be checked against the injected truth.

namespace nilm {

using json = nlohmann::json;

struct SynthAppliance {
  std::string name;
  double power_watts = 0;         // on-phase level
  double power_jitter_watts = 0;  // uniform +- around the level, per phase
  double standby_watts = 0;       // off-phase level
  double on_min_seconds = 0;
  double on_max_seconds = 0;
  double off_min_seconds = 0;
  double off_max_seconds = 0;

  void validate() const {
    if (name.empty()) throw ConfigError("synth: appliance needs a name");
    if (!(power_watts > 0)) {
      throw ConfigError("synth: \"" + name + "\": power must be positive");
    }
    if (power_jitter_watts < 0 || power_jitter_watts >= power_watts) {
      throw ConfigError("synth: \"" + name +
                        "\": jitter must lie in [0, power)");
    }
    if (standby_watts < 0) {
      throw ConfigError("synth: \"" + name + "\": standby must be >= 0");
    }
    if (!(on_min_seconds > 0) || on_max_seconds < on_min_seconds) {
      throw ConfigError("synth: \"" + name + "\": on-duration range invalid");
    }
    if (off_min_seconds < 0 || off_max_seconds < off_min_seconds) {
      throw ConfigError("synth: \"" + name + "\": off-duration range invalid");
    }
  }

  json to_json() const {
    return json{{"name", name},
                {"power_watts", power_watts},
                {"power_jitter_watts", power_jitter_watts},
                {"standby_watts", standby_watts},
                {"on_seconds", {on_min_seconds, on_max_seconds}},
                {"off_seconds", {off_min_seconds, off_max_seconds}}};
  }

  static SynthAppliance from_json(const json& j) {
    SynthAppliance a;
    try {
      a.name = j.at("name").get<std::string>();
      a.power_watts = j.at("power_watts").get<double>();
      a.power_jitter_watts = j.value("power_jitter_watts", 0.0);
      a.standby_watts = j.value("standby_watts", 0.0);
      const auto on = j.at("on_seconds").get<std::vector<double>>();
      const auto off = j.at("off_seconds").get<std::vector<double>>();
      if (on.size() != 2 || off.size() != 2) {
        throw ConfigError("synth: on/off ranges need [min, max]");
      }
      a.on_min_seconds = on[0];
      a.on_max_seconds = on[1];
      a.off_min_seconds = off[0];
      a.off_max_seconds = off[1];
    } catch (const json::exception& e) {
      throw ConfigError(std::string("synth: bad appliance json: ") + e.what());
    }
    a.validate();
    return a;
  }
};

struct SynthScenario {
  double noise_sigma_watts = 0;
  std::vector<SynthAppliance> appliances;

  void validate() const {
    if (noise_sigma_watts < 0) {
      throw ConfigError("synth: noise sigma must be >= 0");
    }
    if (appliances.empty()) {
      throw ConfigError("synth: scenario needs at least one appliance");
    }
    for (const auto& a : appliances) a.validate();
  }

  json to_json() const {
    json out{{"noise_sigma_watts", noise_sigma_watts}};
    out["appliances"] = json::array();
    for (const auto& a : appliances) out["appliances"].push_back(a.to_json());
    return out;
  }

  static SynthScenario from_json(const json& j) {
    SynthScenario s;
    try {
      s.noise_sigma_watts = j.value("noise_sigma_watts", 0.0);
      for (const auto& a : j.at("appliances")) {
        s.appliances.push_back(SynthAppliance::from_json(a));
      }
    } catch (const json::exception& e) {
      throw ConfigError(std::string("synth: bad scenario json: ") + e.what());
    }
    s.validate();
    return s;
  }
};

struct SynthChannel {
  std::string name;
  PowerSeries series;
  std::vector<Activation> injected;  // ground-truth on intervals
};

struct SynthHouse {
  PowerSeries aggregate;
  std::vector<SynthChannel> appliances;
};

// Generates `hours` of data for one house.  Each appliance draws from its own
// seed stream, so adding an appliance does not disturb the others.
inline SynthHouse synth_house(const SynthScenario& scenario, double hours,
                              std::uint64_t seed) {
  scenario.validate();
  if (!(hours > 0)) throw ConfigError("synth: hours must be positive");
  const auto n = static_cast<std::size_t>(hours * 3600.0 / kGridPeriodSeconds);
  if (n == 0) throw ConfigError("synth: duration shorter than one sample");

  SynthHouse house;
  house.aggregate.start_time = 0;
  house.aggregate.period = kGridPeriodSeconds;
  house.aggregate.values.assign(n, 0.0);
  house.aggregate.gaps.assign(n, 0);

  const auto to_points = [](double seconds) {
    return std::max<std::size_t>(
        1, static_cast<std::size_t>(
               std::llround(seconds / kGridPeriodSeconds)));
  };

  for (std::size_t a = 0; a < scenario.appliances.size(); ++a) {
    const SynthAppliance& app = scenario.appliances[a];
    Rng rng(derive_seed(seed, "synth:" + app.name, a));
    SynthChannel chan;
    chan.name = app.name;
    chan.series.start_time = 0;
    chan.series.period = kGridPeriodSeconds;
    chan.series.values.assign(n, app.standby_watts);
    chan.series.gaps.assign(n, 0);

    std::size_t t = 0;
    bool on = false;  // every house starts in an off phase
    while (t < n) {
      if (on) {
        const std::size_t len =
            to_points(rng.uniform(app.on_min_seconds, app.on_max_seconds));
        const double level =
            app.power_watts + rng.uniform(-app.power_jitter_watts,
                                          app.power_jitter_watts);
        const std::size_t end = std::min(n, t + len);
        std::fill(chan.series.values.begin() + t,
                  chan.series.values.begin() + end, level);
        chan.injected.push_back({t, end});
        t = end;
      } else {
        const std::size_t len =
            to_points(rng.uniform(app.off_min_seconds, app.off_max_seconds));
        t = std::min(n, t + len);
      }
      on = !on;
    }
    for (std::size_t i = 0; i < n; ++i) {
      house.aggregate.values[i] += chan.series.values[i];
    }
    house.appliances.push_back(std::move(chan));
  }

  if (scenario.noise_sigma_watts > 0) {
    Rng noise(derive_seed(seed, "synth:noise"));
    for (std::size_t i = 0; i < n; ++i) {
      house.aggregate.values[i] +=
          std::max(0.0, noise.normal(0.0, scenario.noise_sigma_watts));
    }
  }
  return house;
}

}  // namespace nilm
