// Runs the acceptance criteria and prints one line per criterion. Exits
// nonzero when any criterion fails.
#include <cstdlib>
#include <iostream>
#include <string>

#include "basup/acceptance.hpp"
#include "basup/error.hpp"

namespace {

int usage(const char* argv0) {
  std::cerr << "usage: " << argv0 << " [--profile fast|full_synthetic] [--work DIR] [--seed N] [-v]\n";
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  basup::acc::AcceptanceOptions options;
  options.profile = basup::acc::Profile::full_synthetic;
  bool verbose = false;
  try {
    for (int i = 1; i < argc; ++i) {
      const std::string arg = argv[i];
      auto next = [&]() -> std::string {
        if (i + 1 >= argc) throw basup::ConfigError(arg + " needs a value");
        return argv[++i];
      };
      if (arg == "--profile") {
        options.profile = basup::acc::parse_profile(next());
      } else if (arg == "--work") {
        options.work_dir = next();
      } else if (arg == "--seed") {
        options.seed = std::stoull(next());
      } else if (arg == "-v" || arg == "--verbose") {
        verbose = true;
      } else {
        return usage(argv[0]);
      }
    }
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
    return usage(argv[0]);
  }
  if (verbose) options.log = [](const std::string& m) { std::cerr << m << '\n'; };

  const auto results = basup::acc::run_acceptance(options);
  for (const auto& r : results) {
    std::cout << basup::acc::format_line(r) << '\n';
    for (const auto& c : r.checks) {
      if (!c.passed) std::cout << "    failed check " << c.name << ": " << c.detail << '\n';
    }
  }
  std::cout << basup::acc::summary(results) << std::flush;
  return basup::acc::all_passed(results) ? EXIT_SUCCESS : EXIT_FAILURE;
}
