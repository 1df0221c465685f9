#include <gtest/gtest.h>

#include "basup/acceptance.hpp"
#include "helpers.hpp"

using namespace basup;
using namespace basup::acc;

namespace {

// Intersection off by one: the kind of slip the invariant suite must catch.
double off_by_one_iou(std::span<const Mask> pred, std::span<const Mask> gt, eval::IouMode) {
  double inter = 1, uni = 0;
  for (std::size_t f = 0; f < pred.size(); ++f) {
    for (std::size_t i = 0; i < pred[f].pixel_count(); ++i) {
      inter += pred[f][i] && gt[f][i];
      uni += pred[f][i] || gt[f][i];
    }
  }
  return uni == 0 ? 100.0 : 100.0 * inter / uni;
}

std::vector<std::string> failed_names(const std::vector<Check>& checks) {
  std::vector<std::string> out;
  for (const auto& c : checks) {
    if (!c.passed) out.push_back(c.name + ": " + c.detail);
  }
  return out;
}

}  // namespace

TEST(Invariants, CleanImplementationPasses) {
  test::TempDir dir("acc-clean");
  const auto checks = run_invariants(dir / "scratch");
  EXPECT_GT(checks.size(), 40u);
  EXPECT_TRUE(failed_names(checks).empty()) << ::testing::PrintToString(failed_names(checks));
}

TEST(Invariants, TamperedIouIsCaught) {
  test::TempDir dir("acc-tampered");
  InvariantHooks hooks;
  hooks.iou = off_by_one_iou;
  const auto failed = failed_names(run_invariants(dir / "scratch", hooks));
  ASSERT_FALSE(failed.empty());
  for (const auto& name : failed) EXPECT_NE(name.find("iou"), std::string::npos) << name;
}

TEST(Report, LinesAndVerdict) {
  CriterionResult pass{1, "invariants", Outcome::pass, "59/59 checks", 2.0, 0.0, {}};
  CriterionResult skip{7, "full scale", Outcome::skip, "documented only", 0.0, 0.0, {}};
  CriterionResult fail{5, "localization", Outcome::fail, "too low", 10.0, 5.0, {}};
  EXPECT_EQ(format_line(pass).rfind("PASS criterion 1", 0), 0u);
  EXPECT_EQ(format_line(skip).rfind("SKIP criterion 7", 0), 0u);
  EXPECT_NE(format_line(fail).find("of 5 s"), std::string::npos);
  EXPECT_TRUE(all_passed({pass, skip}));
  EXPECT_FALSE(all_passed({pass, skip, fail}));
  EXPECT_EQ(parse_profile(to_string(Profile::full_synthetic)), Profile::full_synthetic);
}
