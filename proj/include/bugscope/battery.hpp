#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bugscope/config.hpp"
#include "bugscope/metrics.hpp"

namespace bugscope {

inline constexpr const char* kReportSchema = "bugscope-battery/1";
inline constexpr const char* kOutputDirEnv = "BUGSCOPE_OUTPUT_DIR";

// One (row, method, metric) cell. Rows are "clean" plus one per bug label.
struct BatteryCell {
  std::string bug;
  std::string method;
  std::string metric;
  std::optional<ScoreSummary> summary;  // empty when the cell failed
  std::string error;                    // reason when failed
};

struct AccuracyRecord {
  std::string model;    // "clean" or a bug label
  std::string dataset;  // what it was measured on
  double value = 0.0;
};

struct StageCurve {
  std::string method;
  std::vector<std::vector<std::size_t>> reinitialized;  // per stage
  std::vector<double> ssim;      // mean over inputs, vs stage 0
  std::vector<double> spearman;  // mean rank correlation of the unsigned maps, vs stage 0
  std::string error;             // set when the method failed at some stage
};

struct ArtifactEntry {
  std::string path;  // relative to the output directory
  std::uint64_t bytes = 0;
  std::string hash;  // 16 hex digits of a 64-bit content hash
};

struct BatteryReport {
  BatteryConfig config;
  std::vector<AccuracyRecord> accuracy;
  std::vector<BatteryCell> cells;
  std::vector<StageCurve> stages;
  std::vector<ArtifactEntry> artifacts;

  const BatteryCell* cell(const std::string& bug, const std::string& method,
                          const std::string& metric) const;
  std::optional<double> accuracy_of(const std::string& model, const std::string& dataset) const;
};

// The output directory after the environment override.
std::filesystem::path resolve_output_dir(const BatteryConfig& cfg);

// Trains, injects, attributes and scores every configured cell, then writes
// report.json, scores.csv and heatmaps/ under the output directory. Failures
// inside a cell are recorded in that cell; configuration and I/O errors throw.
BatteryReport run_battery(const BatteryConfig& cfg);

// Report serializations. Both are pure functions of the report.
std::string report_to_json(const BatteryReport& report);
std::string report_to_csv(const BatteryReport& report);

}  // namespace bugscope
