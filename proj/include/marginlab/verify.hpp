#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace marginlab {

struct VerifyOptions {
    std::uint64_t seed = 1;
    std::string filter;  // substring of suite names; empty runs all
    std::string fault;   // "jacobian": corrupt the Jacobian seen by the suites
    std::size_t trials = 20;
    std::size_t jobs = 1;
};

struct SuiteResult {
    std::string name;
    bool passed = false;
    double worst = 0.0;      // largest violation statistic
    double threshold = 0.0;  // pass iff worst <= threshold
    std::size_t cases = 0;
    std::string detail;
};

std::vector<std::string> verify_suite_names();

/// Runs the selected property suites on seeded random networks. Throws
/// InvalidInput when the filter matches nothing or the fault is unknown.
std::vector<SuiteResult> run_verify(const VerifyOptions& options);

}  // namespace marginlab
