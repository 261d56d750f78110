#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "flsim/config.hpp"
#include "flsim/fl_engine.hpp"

namespace flsim::harness {

struct RunSummary {
  double final_acc = 0.0;  // mean over the last (up to) 5 rounds
  double final_asr = 0.0;
  int rounds = 0;
};

struct RunArchive {
  config::ExperimentConfig cfg;
  std::string digest;
  std::vector<engine::RoundReport> rounds;
  RunSummary summary;
  bool failed = false;
  std::string error;
};

/// Build data, partition, and roster from the config and execute all rounds.
/// A pure function of the config: identical configs give identical archives.
RunArchive run_experiment(const config::ExperimentConfig& cfg);

/// config.cfg, rounds.jsonl, summary.json under `dir`. The stream is fully
/// deterministic (wall-clock timing is logged separately, never archived).
void write_archive(const RunArchive& archive, const std::filesystem::path& dir);

RunArchive read_archive(const std::filesystem::path& dir);

/// Recompute the summary from a round stream; used to check archives.
RunSummary summarize(const std::vector<engine::RoundReport>& rounds);

enum class SweepAxis { NoniidDegree, NMalicious, PoisonRate, Temperature, Layers };

std::optional<SweepAxis> sweep_axis_from_name(const std::string& name);

/// Apply one axis value to a copy of the base config. The non-iid degree
/// axis maps a unified scale g in [0.1, 0.9] onto each scheme's parameter:
/// beta = 1/g - 1 (dir, qs), q = g (prob), c = round(C * (1 - g)) floored at
/// 1 (qty), sigma = g (noise).
config::ExperimentConfig apply_axis(const config::ExperimentConfig& base, SweepAxis axis,
                                    double value);

/// One run per value with shared seeds; a failing cell is archived with its
/// error and the sweep continues. Archives are written under
/// out_base/<axis>=<value>/.
std::vector<RunArchive> sweep(const config::ExperimentConfig& base, SweepAxis axis,
                              const std::vector<double>& values,
                              const std::filesystem::path& out_base);

/// One row per archive: digest, final Acc, final ASR, and the defense's
/// exclusion precision/recall against the roster's ground truth ("n/a" when
/// undefined).
std::string report_table(const std::vector<RunArchive>& archives);

/// report.txt plus report_data.csv (documented header) under out_dir.
void write_report(const std::vector<RunArchive>& archives,
                  const std::filesystem::path& out_dir);

}  // namespace flsim::harness
