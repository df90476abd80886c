#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qmr/phantom.hpp"
#include "qmr/registration.hpp"
#include "qmr/t1fit.hpp"

namespace qmr {

/// One sequence to process: a generated phantom or a stack on disk.
struct ExperimentCase {
  std::string name;
  std::optional<PhantomConfig> phantom;
  std::filesystem::path input;                 // used when phantom is empty
  std::optional<std::filesystem::path> mask;   // ROI for input stacks
};

/// Acceptance thresholds, each checked on every case when set.
struct Thresholds {
  std::optional<double> min_d_pca_gain;     // d_pca after - before must exceed this
  std::optional<double> min_sd_reduction;   // (before - after) / before >= this
  std::optional<double> max_sd_change;      // |after - before| / before <= this
  std::optional<double> max_epe_ratio;      // phantom only: after / before <= this
  std::optional<double> max_field_sup;      // sup-norm of the total field, px
};

struct ExperimentConfig {
  std::vector<ExperimentCase> cases;
  RegistrationConfig registration;
  FitOptions fit;
  int top_k = 1;
  Thresholds thresholds;
  std::optional<std::filesystem::path> png_dir;
  std::uint64_t seed = 7;
  nlohmann::json source;  // the parsed document, echoed into the report
};

/// Reads a JSON experiment description. Relative input paths resolve against
/// the file's directory.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
ExperimentConfig parse_experiment_config(const nlohmann::json& document,
                                         const std::filesystem::path& base = {});

struct StageTiming {
  double load = 0.0;
  double registration = 0.0;
  double fitting = 0.0;
  double evaluation = 0.0;
};

struct CaseReport {
  std::string name;
  double d_pca_before = 0.0;
  double d_pca_after = 0.0;
  double roi_sd_before = 0.0;  // ms, mean of the SD map over the ROI
  double roi_sd_after = 0.0;
  double roi_t1_before = 0.0;  // ms, mean T1 over the ROI
  double roi_t1_after = 0.0;
  std::optional<EndpointError> epe_before;
  std::optional<EndpointError> epe_after;
  double field_sup = 0.0;
  double field_mean = 0.0;
  std::vector<RoundReport> rounds;
  bool aborted = false;
  std::string diagnostic;
  std::vector<std::string> failures;  // threshold violations
  StageTiming timing;
};

struct ExperimentReport {
  std::vector<CaseReport> cases;
  bool passed = true;
  std::uint64_t seed = 0;
  nlohmann::json config;
};

/// Runs load/phantom -> register -> fit -> evaluate for every case, up to
/// `jobs` cases at a time. Stage failures throw Error with the case and
/// stage in the message.
ExperimentReport run_experiment(const ExperimentConfig& config, int jobs = 1);

/// Key-sorted report. Wall-clock fields sit under "timing" keys and are
/// dropped when include_timing is false.
nlohmann::json to_json(const ExperimentReport& report, bool include_timing = true);

/// Flattens a JSON document into "key,value" lines with dotted keys and
/// bracketed array indices.
std::string to_csv(const nlohmann::json& document);

const char* version();

}  // namespace qmr
