#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace simmer {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct SelfcheckOptions {
    std::uint64_t seed = 0;
    /// Extra params file whose contents must load and be finite.
    std::optional<std::filesystem::path> params_file;
};

/// Embedded oracle suite: gradient check, grad-cache equivalence, metric
/// oracle, closed-form losses and format round trips.
std::vector<CheckResult> run_selfcheck(const SelfcheckOptions& options);

}  // namespace simmer
