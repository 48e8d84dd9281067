#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nilm/activations.hpp"
#include "nilm/checkpoint.hpp"
#include "nilm/errors.hpp"
#include "nilm/series.hpp"
#include "nilm/synth.hpp"
#include "nilm/training.hpp"

// Experiment manifest: one JSON file that pins every experiment constant —
// appliance thresholds and window lengths, the house split, sampling ratios,
// model and training configuration, and (optionally) a synthetic-data
// scenario.  Domain constants live here as data, not in code.
//
// Relative paths inside a manifest resolve against the manifest's directory.

namespace nilm {

struct SourceSpec {
  std::string path;
  std::string power = "active";  // "active" or "apparent"
  CsvColumnSpec columns;

  static SourceSpec from_json(const json& j) {
    SourceSpec s;
    if (j.is_string()) {
      s.path = j.get<std::string>();
      return s;
    }
    try {
      s.path = j.at("path").get<std::string>();
      s.power = j.value("power", s.power);
      s.columns.time_column = j.value("time_column", 0);
      s.columns.power_column = j.value("power_column", 1);
      s.columns.has_header = j.value("has_header", false);
      s.columns.period_override = j.value("period_seconds", 0.0);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("manifest: bad source spec: ") + e.what());
    }
    if (s.power != "active" && s.power != "apparent") {
      throw ConfigError("manifest: power must be \"active\" or \"apparent\" "
                        "(apparent is accepted as an aggregate substitute), "
                        "got \"" + s.power + "\"");
    }
    return s;
  }
};

struct HouseSpec {
  int id = 0;
  std::string role;  // "train" or "test"
  SourceSpec aggregate;
  std::map<std::string, SourceSpec> appliances;  // appliance name -> source
};

struct ApplianceManifest {
  ActivationSpec activation;
  std::size_t window_length = 0;
  std::vector<int> exclude_houses;
  std::optional<double> mae_normalizer_watts;
};

struct SamplingManifest {
  int positives_per_activation = 1;
  double negatives_per_positive = 1.0;
};

struct SynthHouseSpec {
  int id = 0;
  double hours = 0;
};

struct SynthManifest {
  SynthScenario scenario;
  std::vector<SynthHouseSpec> houses;
};

struct ExperimentManifest {
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  std::vector<HouseSpec> houses;
  std::vector<std::pair<std::string, ApplianceManifest>> appliances;  // sorted
  SamplingManifest sampling;
  json model;  // dispatched on "kind"; empty object = default network
  TrainConfig train;
  std::optional<SynthManifest> synth;
  std::filesystem::path base_dir;  // directory the manifest was loaded from
  std::uint64_t digest = 0;        // digest of the manifest document

  const ApplianceManifest* find_appliance(const std::string& name) const {
    for (const auto& [n, a] : appliances) {
      if (n == name) return &a;
    }
    return nullptr;
  }

  // Resolves a manifest-relative path.
  std::string resolve(const std::string& path) const {
    std::filesystem::path p(path);
    if (p.is_absolute() || base_dir.empty()) return path;
    return (base_dir / p).string();
  }

  void validate() const {
    if (appliances.empty()) {
      throw ConfigError("manifest: needs at least one appliance");
    }
    for (const auto& [name, a] : appliances) {
      a.activation.validate();
      if (a.window_length < 2) {
        throw ConfigError("manifest: appliance \"" + name +
                          "\": window_length must be at least 2");
      }
    }
    std::set<int> ids;
    for (const auto& h : houses) {
      if (!ids.insert(h.id).second) {
        throw ConfigError("manifest: duplicate house id " +
                          std::to_string(h.id));
      }
      if (h.role != "train" && h.role != "test") {
        throw ConfigError("manifest: house " + std::to_string(h.id) +
                          ": role must be \"train\" or \"test\", got \"" +
                          h.role + "\"");
      }
      if (h.aggregate.path.empty()) {
        throw ConfigError("manifest: house " + std::to_string(h.id) +
                          ": aggregate source path is empty");
      }
      for (const auto& [name, src] : h.appliances) {
        if (find_appliance(name) == nullptr) {
          throw ConfigError("manifest: house " + std::to_string(h.id) +
                            " references appliance \"" + name +
                            "\" which has no appliance entry");
        }
        if (src.path.empty()) {
          throw ConfigError("manifest: house " + std::to_string(h.id) +
                            ": source path for \"" + name + "\" is empty");
        }
      }
    }
    if (sampling.positives_per_activation < 1) {
      throw ConfigError("manifest: positives_per_activation must be >= 1");
    }
    if (sampling.negatives_per_positive < 0) {
      throw ConfigError("manifest: negatives_per_positive must be >= 0");
    }
    if (synth) {
      synth->scenario.validate();
      if (synth->houses.empty()) {
        throw ConfigError("manifest: synth section lists no houses");
      }
      for (const auto& h : synth->houses) {
        if (!(h.hours > 0)) {
          throw ConfigError("manifest: synth house " + std::to_string(h.id) +
                            ": hours must be positive");
        }
      }
    }
  }

  static ExperimentManifest from_json(const json& j,
                                      std::filesystem::path base_dir = {}) {
    ExperimentManifest m;
    m.base_dir = std::move(base_dir);
    m.digest = json_digest(j);
    try {
      m.seed = j.value("seed", std::uint64_t{1});
      m.output_dir = j.value("output_dir", std::string("out"));
      if (j.contains("houses")) {
        for (const auto& hj : j.at("houses")) {
          HouseSpec h;
          h.id = hj.at("id").get<int>();
          h.role = hj.at("role").get<std::string>();
          h.aggregate = SourceSpec::from_json(hj.at("aggregate"));
          if (hj.contains("appliances")) {
            for (const auto& [name, src] : hj.at("appliances").items()) {
              h.appliances[name] = SourceSpec::from_json(src);
            }
          }
          m.houses.push_back(std::move(h));
        }
      }
      if (j.contains("appliances")) {
        for (const auto& [name, aj] : j.at("appliances").items()) {
          ApplianceManifest a;
          a.activation.on_power_threshold_watts =
              aj.at("on_power_threshold_watts").get<double>();
          a.activation.min_on_duration_seconds =
              aj.at("min_on_duration_seconds").get<double>();
          a.activation.min_off_duration_seconds =
              aj.at("min_off_duration_seconds").get<double>();
          a.window_length = aj.at("window_length").get<std::size_t>();
          a.exclude_houses =
              aj.value("exclude_houses", std::vector<int>{});
          if (aj.contains("mae_normalizer_watts")) {
            a.mae_normalizer_watts =
                aj.at("mae_normalizer_watts").get<double>();
          }
          m.appliances.emplace_back(name, std::move(a));
        }
      }
      if (j.contains("sampling")) {
        const auto& sj = j.at("sampling");
        m.sampling.positives_per_activation =
            sj.value("positives_per_activation", 1);
        m.sampling.negatives_per_positive =
            sj.value("negatives_per_positive", 1.0);
      }
      m.model = j.value("model", json::object());
      m.train = j.contains("train") ? TrainConfig::from_json(j.at("train"))
                                    : TrainConfig{};
      if (j.contains("synth")) {
        SynthManifest s;
        s.scenario = SynthScenario::from_json(j.at("synth").at("scenario"));
        for (const auto& hj : j.at("synth").at("houses")) {
          s.houses.push_back(SynthHouseSpec{hj.at("id").get<int>(),
                                            hj.at("hours").get<double>()});
        }
        m.synth = std::move(s);
      }
    } catch (const json::exception& e) {
      throw ConfigError(std::string("manifest: malformed json: ") + e.what());
    }
    // JSON object iteration is key-sorted, so this is already deterministic;
    // keep the explicit sort as documentation of the contract.
    std::sort(m.appliances.begin(), m.appliances.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    m.validate();
    return m;
  }
};

inline ExperimentManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError(path + ": cannot open manifest");
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": manifest is not valid json: " + e.what());
  }
  return ExperimentManifest::from_json(
      j, std::filesystem::path(path).parent_path());
}

}  // namespace nilm
