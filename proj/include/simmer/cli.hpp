#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace simmer {

inline constexpr const char* kToolVersion = "simmer 0.1.0";

/// Provenance written beside the outputs of every CLI run.
struct RunManifest {
    std::string subcommand;
    std::map<std::string, std::string> flags;
    std::map<std::string, std::string> input_digests;  // path -> 16 hex digits
    std::string tool_version = kToolVersion;
    std::uint64_t seed = 0;
    std::string timestamp;  // the only run-dependent field
};

/// FNV-1a 64 over the file bytes, as 16 lowercase hex digits.
std::string content_digest(const std::filesystem::path& path);

std::string serialize_manifest(const RunManifest& manifest);

/// Entry point behind the `simmer` binary. `args` excludes the program name.
/// Returns 0 on success, 1 on usage errors, 2 on data errors, 3 on numeric
/// failures.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace simmer
