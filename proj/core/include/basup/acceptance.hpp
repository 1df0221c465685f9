#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "basup/evalreport.hpp"
#include "basup/image.hpp"

namespace basup::acc {

namespace fs = std::filesystem;

/// `fast` runs the invariant suite and the gradient check; `full_synthetic`
/// adds the training-based criteria on the desk-scale synthetic scene.
enum class Profile { fast, full_synthetic };

std::string to_string(Profile profile);
Profile parse_profile(const std::string& name);

enum class Outcome { pass, fail, skip };
std::string to_string(Outcome outcome);

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct CriterionResult {
  int id = 0;
  std::string title;
  Outcome outcome = Outcome::fail;
  std::string detail;
  double seconds = 0.0;
  /// Wall-clock budget; exceeding it fails the criterion. Zero means none.
  double budget_seconds = 0.0;
  std::vector<Check> checks;
};

using IouFunction = std::function<double(std::span<const Mask>, std::span<const Mask>, eval::IouMode)>;

/// Replaceable pieces of the invariant suite, so the suite itself can be
/// tested against a deliberately broken implementation.
struct InvariantHooks {
  IouFunction iou;
};

/// Runs every invariant check, writing scratch trees below `scratch`.
std::vector<Check> run_invariants(const fs::path& scratch, const InvariantHooks& hooks = {});

struct GradientReport {
  std::string setup;
  std::size_t sampled = 0;
  /// Draws rejected because the loss has a kink within the step.
  std::size_t kinks = 0;
  double max_relative_error = 0.0;
  std::string worst_parameter;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Central differences against backprop in double precision on the desk
/// backbone, for the classification loss alone and with the puzzle and
/// temporal terms.
std::vector<GradientReport> gradient_check(std::size_t samples = 100, std::uint64_t seed = 0);

/// Measured quantities of the synthetic criteria.
struct SyntheticMeasurements {
  double ablated_accuracy = 0.0;
  std::size_t ablated_frames = 0;
  double three_class_c_before = 0.0;
  double three_class_c_after = 0.0;
  double three_class_r_before = 0.0;
  double two_class_c_before = 0.0;
  double two_class_c_after = 0.0;
  double two_class_r_before = 0.0;
  double seconds = 0.0;
};

struct AcceptanceOptions {
  Profile profile = Profile::fast;
  fs::path work_dir = "acceptance";
  std::uint64_t seed = 0;
  std::function<void(const std::string&)> log;
};

CriterionResult criterion_invariants(const fs::path& scratch, const InvariantHooks& hooks = {});
CriterionResult criterion_gradients(std::uint64_t seed = 0);
/// Criteria 3, 4 and 5 share one pair of pipeline runs.
std::vector<CriterionResult> criteria_synthetic(const AcceptanceOptions& options,
                                                SyntheticMeasurements* measured = nullptr);
CriterionResult criterion_oracle(const AcceptanceOptions& options);
/// Full-scale reproduction; documented only.
CriterionResult criterion_full_scale();

std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& options);

/// "PASS criterion 3: ..." style line.
std::string format_line(const CriterionResult& result);
std::string summary(const std::vector<CriterionResult>& results);
/// True when no criterion failed; skipped ones do not count against it.
bool all_passed(const std::vector<CriterionResult>& results);

}  // namespace basup::acc
